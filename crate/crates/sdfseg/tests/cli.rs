use std::fs;
use std::path::{Path, PathBuf};

use sdfseg::cli::run_args;
use sdfseg::{dataset, formats};
use sdfseg_core::nn::{Architecture, ScoreModel};
use sdfseg_core::sdf::{decode_mask, encode_sdf, SdfConfig};

fn run(args: &[&str]) -> sdfseg::Result<()> {
    run_args(std::iter::once("sdfseg").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file of a directory, sorted by name.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

/// Snapshot without run manifests, which carry timings.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    snapshot(dir).into_iter().filter(|(n, _)| n != "manifest.jsonl").collect()
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&["gen", "--n", "8", "--grid", "32", "--seed", "1", "--out", p(&a)]).unwrap();
    run(&["gen", "--n", "8", "--grid", "32", "--seed", "1", "--out", p(&b)]).unwrap();
    let sa = snapshot(&a);
    assert_eq!(sa.len(), 8 * 3 + 1);
    assert_eq!(sa, snapshot(&b));
    run(&["gen", "--n", "8", "--grid", "32", "--seed", "2", "--out", p(&b), "--force"]).unwrap();
    assert_ne!(sa, snapshot(&b));
}

#[test]
fn gen_empty_dataset_has_valid_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("empty");
    run(&["gen", "--n", "0", "--out", p(&d)]).unwrap();
    let m = dataset::read_manifest(&d).unwrap();
    assert_eq!(m.n, 0);
    assert!(m.samples.is_empty());
    assert_eq!(snapshot(&d).len(), 1);
}

#[test]
fn gen_refuses_non_empty_output_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    run(&["gen", "--n", "1", "--out", p(&d)]).unwrap();
    let err = run(&["gen", "--n", "1", "--out", p(&d)]).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    // --force replaces a larger previous dataset entirely
    run(&["gen", "--n", "3", "--out", p(&d), "--force"]).unwrap();
    run(&["gen", "--n", "1", "--out", p(&d), "--force"]).unwrap();
    assert_eq!(snapshot(&d).len(), 4);
}

#[test]
fn generated_masks_round_trip_through_the_sdf_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("g16");
    run(&["gen", "--grid", "16", "--n", "100", "--out", p(&d)]).unwrap();
    let (m, items) = dataset::read(&d, 0).unwrap();
    assert_eq!(items.len(), 100);
    assert_eq!(m.delta, 5.0);
    for it in &items {
        assert_eq!(decode_mask(&it.sdf, 0.0), it.mask);
        assert_eq!(it.mask.dims(), (16, 16));
    }

    // and through the encode/decode commands
    let mask_path = dataset::file(&d, 7, "mask.pgm");
    let sdf_path = tmp.path().join("x.sdf.bin");
    let back_path = tmp.path().join("x.mask.pgm");
    run(&["encode", "--input", p(&mask_path), "--out", p(&sdf_path)]).unwrap();
    assert_eq!(fs::read(&sdf_path).unwrap(), fs::read(dataset::file(&d, 7, "sdf.bin")).unwrap());
    run(&["decode", "--input", p(&sdf_path), "--tau", "0", "--out", p(&back_path)]).unwrap();
    assert_eq!(fs::read(&back_path).unwrap(), fs::read(&mask_path).unwrap());
    assert_eq!(
        run(&["decode", "--input", p(&sdf_path), "--out", p(&back_path)]).unwrap_err().exit_code(),
        1
    );
    let sdf = formats::read_sdf(&sdf_path).unwrap();
    let expected = encode_sdf(&items[7].mask, &SdfConfig::for_grid(16, 16));
    assert_eq!(decode_mask(&sdf, 0.0), decode_mask(&expected, 0.0));
}

#[test]
fn eval_of_identical_directories_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let e = tmp.path().join("e");
    run(&["gen", "--n", "5", "--out", p(&d)]).unwrap();
    run(&["eval", "--pred", p(&d), "--gt", p(&d), "--out", p(&e)]).unwrap();
    let csv = fs::read_to_string(e.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image_id,f1,iou");
    assert_eq!(lines.len(), 1 + 5 + 1);
    for l in &lines[1..] {
        assert!(l.ends_with(",1.0,1.0"), "{l}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(e.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mean_iou"], 1.0);
    assert_eq!(report["averaging"], "per-image");
}

fn tiny_setup(tmp: &Path) -> (PathBuf, PathBuf) {
    let data = tmp.join("data");
    let model = tmp.join("model");
    run(&["gen", "--grid", "16", "--n", "4", "--seed", "3", "--out", p(&data)]).unwrap();
    run(&[
        "train",
        "--data",
        p(&data),
        "--steps",
        "3",
        "--set",
        "width=4",
        "--set",
        "embed_freqs=3",
        "--set",
        "embed_hidden=6",
        "--set",
        "batch_size=2",
        "--set",
        "checkpoint_every=2",
        "--out",
        p(&model),
    ])
    .unwrap();
    (data, model)
}

#[test]
fn training_is_reproducible_and_resumable() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = tiny_setup(tmp.path());
    let loss = fs::read_to_string(model.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);
    assert_eq!(loss.lines().next().unwrap(), "step,loss");
    let ck = formats::read_checkpoint(&model.join("model.scm")).unwrap();
    assert_eq!(ck.adam.as_ref().unwrap().step, 3);
    assert_eq!(ck.model.architecture().width, 4);

    let common = [
        "--set",
        "width=4",
        "--set",
        "embed_freqs=3",
        "--set",
        "embed_hidden=6",
        "--set",
        "batch_size=2",
        "--set",
        "checkpoint_every=2",
    ];
    let again = tmp.path().join("again");
    let mut args = vec!["train", "--data", p(&data), "--steps", "3", "--out", p(&again)];
    args.extend(common);
    run(&args).unwrap();
    assert_eq!(outputs(&model), outputs(&again));

    // two steps, then resume to three
    let split = tmp.path().join("split");
    let mut args = vec!["train", "--data", p(&data), "--steps", "2", "--out", p(&split)];
    args.extend(common);
    run(&args).unwrap();
    let mut args = vec!["train", "--data", p(&data), "--steps", "3", "--resume", "--out", p(&split)];
    args.extend(common);
    run(&args).unwrap();
    assert_eq!(outputs(&model), outputs(&split));
}

#[test]
fn ensembles_share_their_first_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = tiny_setup(tmp.path());
    let ck = model.join("model.scm");
    let s1 = tmp.path().join("s1");
    let s2 = tmp.path().join("s2");
    for (dir, r) in [(&s1, "1"), (&s2, "2")] {
        run(&[
            "sample", "--model", p(&ck), "--data", p(&data), "--ensemble", r, "--limit", "2", "--seed", "5",
            "--set", "levels=8", "--out", p(dir),
        ])
        .unwrap();
    }
    let first = |dir: &Path| fs::read(dataset::file(dir, 1, "r000.sdf.bin")).unwrap();
    assert_eq!(first(&s1), first(&s2));
    assert!(dataset::file(&s2, 1, "r001.sdf.bin").exists());
    assert!(!dataset::file(&s1, 1, "r001.sdf.bin").exists());
    assert!(!dataset::file(&s1, 2, "mask.pgm").exists());
    // R = 1: zero spread
    let (std, _) = formats::read_raster(&dataset::file(&s1, 0, "std.sdf.bin")).unwrap();
    assert!(std.values().iter().all(|&v| v == 0.0));
    let manifest = fs::read_to_string(s2.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    for l in manifest.lines() {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }

    // eval over the sample directory adds uncertainty statistics
    let e = tmp.path().join("e");
    run(&["eval", "--pred", p(&s2), "--gt", p(&data), "--out", p(&e)]).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&fs::read(e.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["images"], 2);
    assert!(report["single_sample"]["mean_iou"].is_number());
    assert_eq!(report["uncertainty"]["per_image"].as_array().unwrap().len(), 2);
    assert!(dataset::file(&e, 0, "error.sdf.bin").exists());
    assert!(dataset::file(&e, 0, "xor.mask.pgm").exists());
}

#[test]
fn corruption_at_t_zero_keeps_the_mask() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("c");
    run(&["gen", "--n", "2", "--out", p(&data)]).unwrap();
    run(&["corrupt", "--data", p(&data), "--index", "1", "--t", "0,0.5,1", "--out", p(&out)]).unwrap();
    let gt = formats::read_mask(&dataset::file(&data, 1, "mask.pgm")).unwrap();
    for mode in ["sdf", "binary"] {
        let m = formats::read_mask(&out.join(format!("t00.{mode}.mask.pgm"))).unwrap();
        let diff = m.labels().iter().zip(gt.labels()).filter(|(a, b)| a != b).count();
        assert!((diff as f64) < 0.001 * 1024.0, "{mode}: {diff}");
    }
    let csv = fs::read_to_string(out.join("corrupt.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let err = run(&["corrupt", "--data", p(&data), "--t", "0,1.5", "--out", p(&out), "--force"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["frobnicate"]).unwrap_err().exit_code(), 1);
    assert_eq!(run(&["gen"]).unwrap_err().exit_code(), 1);
    assert_eq!(run(&["train", "--out", p(&out)]).unwrap_err().exit_code(), 1);

    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(run(&["gen", "--config", p(&cfg), "--out", p(&out)]).unwrap_err().exit_code(), 2);
    fs::write(&cfg, "# fine\nseed = 4\nn = 2\n").unwrap();
    run(&["gen", "--config", p(&cfg), "--out", p(&out)]).unwrap();
    assert_eq!(dataset::read_manifest(&out).unwrap().seed, 4);
    assert_eq!(run(&["gen", "--set", "levels=1", "--out", p(&out)]).unwrap_err().exit_code(), 2);

    let missing = tmp.path().join("nope.pgm");
    let err = run(&["encode", "--input", p(&missing), "--out", p(&tmp.path().join("x"))]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let junk = tmp.path().join("junk.pgm");
    fs::write(&junk, b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
    let err = run(&["encode", "--input", p(&junk), "--out", p(&tmp.path().join("x"))]).unwrap_err();
    assert_eq!(err.exit_code(), 3);

    // a model whose output overflows aborts sampling with the numeric code
    let arch = Architecture::tiny();
    let mut params = ScoreModel::init(arch.clone(), 1).unwrap().params().to_vec();
    let bias = arch.layout().into_iter().find(|b| b.name == "out.bias").unwrap();
    params[bias.offset] = 1e300;
    let ck = tmp.path().join("bad.scm");
    formats::write_checkpoint(&ck, &ScoreModel::new(arch, params).unwrap(), None).unwrap();
    let err = run(&[
        "sample", "--model", p(&ck), "--data", p(&out), "--ensemble", "1", "--set", "levels=4", "--out",
        p(&tmp.path().join("s")),
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 4, "{err}");
}
