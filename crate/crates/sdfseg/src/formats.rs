//! On-disk formats.
//!
//! * Masks and images: binary 8-bit PGM (`P5`). Masks use 0 for background
//!   and 255 for foreground.
//! * Fields: `SDF1` raster — magic, `u32` width, `u32` height, `f32` delta
//!   (16-byte header), then `width * height` little-endian `f32` values.
//! * Checkpoints: `SCM1` — magic, `u64` descriptor length, descriptor bytes,
//!   `u64` parameter count, little-endian `f64` parameters, then optionally
//!   the optimizer state: `u64` step, first moments, second moments.

use std::fs;
use std::io::Write;
use std::path::Path;

use sdfseg_core::nn::{Architecture, ScoreModel};
use sdfseg_core::train::AdamState;
use sdfseg_core::{BinaryMask, CondImage, Field, SdfMap};

use crate::error::{CliError, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(CliError::io(path))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partially written file.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    let mut f = fs::File::create(tmp).map_err(CliError::io(tmp))?;
    f.write_all(bytes).map_err(CliError::io(tmp))?;
    drop(f);
    fs::rename(tmp, path).map_err(CliError::io(path))
}

/// Encodes an 8-bit binary PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Decodes an 8-bit binary PGM (comments allowed in the header).
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let num = |t: String| t.parse::<usize>().map_err(|_| format!("bad header number `{t}`"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if width == 0 || height == 0 {
        return Err("zero-sized image".into());
    }
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    let data = bytes.get(pos..pos + n).ok_or("truncated raster")?;
    if bytes.len() != pos + n {
        return Err("trailing bytes after raster".into());
    }
    let scale = |v: u8| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8;
    Ok((width, height, data.iter().map(|&v| scale(v)).collect()))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let pixels: Vec<u8> = mask.labels().iter().map(|&l| l * 255).collect();
    write_bytes(path, &encode_pgm(mask.width(), mask.height(), &pixels))
}

/// Reads a mask PGM; pixels of 128 and above are foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (w, h, px) = decode_pgm(&read_bytes(path)?).map_err(|m| CliError::format(path, m))?;
    BinaryMask::new(w, h, px.iter().map(|&v| u8::from(v >= 128)).collect())
        .map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_image(path: &Path, image: &CondImage) -> Result<()> {
    let pixels: Vec<u8> = image.values().iter().map(|&v| (v * 255.0).round() as u8).collect();
    write_bytes(path, &encode_pgm(image.width(), image.height(), &pixels))
}

pub fn read_image(path: &Path) -> Result<CondImage> {
    let (w, h, px) = decode_pgm(&read_bytes(path)?).map_err(|m| CliError::format(path, m))?;
    CondImage::new(w, h, px.iter().map(|&v| f64::from(v) / 255.0).collect())
        .map_err(|e| CliError::format(path, e.to_string()))
}

const SDF_MAGIC: &[u8; 4] = b"SDF1";

pub fn encode_raster(field: &Field, delta: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * field.len());
    out.extend_from_slice(SDF_MAGIC);
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    out.extend_from_slice(&(delta as f32).to_le_bytes());
    for &v in field.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raster(bytes: &[u8]) -> std::result::Result<(Field, f64), String> {
    if bytes.len() < 16 || &bytes[..4] != SDF_MAGIC {
        return Err("not an SDF1 raster".into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h) = (u32_at(4) as usize, u32_at(8) as usize);
    let delta = f64::from(f32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")));
    let n = w.checked_mul(h).ok_or("raster size overflows")?;
    if bytes.len() != 16 + 4 * n {
        return Err(format!("expected {} raster bytes, found {}", 4 * n, bytes.len() - 16));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let field = Field::new(w, h, values).map_err(|e| e.to_string())?;
    Ok((field, delta))
}

/// Writes any field (SDF, sample, mean, std, error) as an `SDF1` raster.
pub fn write_raster(path: &Path, field: &Field, delta: f64) -> Result<()> {
    write_bytes(path, &encode_raster(field, delta))
}

pub fn read_raster(path: &Path) -> Result<(Field, f64)> {
    decode_raster(&read_bytes(path)?).map_err(|m| CliError::format(path, m))
}

/// Reads a raster and checks it is a valid SDF (values in `[-1, 1]`).
pub fn read_sdf(path: &Path) -> Result<SdfMap> {
    let (field, delta) = read_raster(path)?;
    SdfMap::new(field, delta).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_sdf(path: &Path, sdf: &SdfMap) -> Result<()> {
    write_raster(path, sdf.field(), sdf.delta())
}

const CKPT_MAGIC: &[u8; 4] = b"SCM1";

/// A checkpoint: model plus optional optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ScoreModel,
    pub adam: Option<AdamState>,
}

pub fn encode_checkpoint(model: &ScoreModel, adam: Option<&AdamState>) -> Vec<u8> {
    let desc = model.architecture().descriptor();
    let params = model.params();
    let mut out = Vec::with_capacity(32 + desc.len() + 8 * params.len() * 3);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&(desc.len() as u64).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    if let Some(a) = adam {
        out.extend_from_slice(&a.step.to_le_bytes());
        for v in a.m.iter().chain(&a.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut pos = 0;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let s = bytes.get(pos..pos + n).ok_or("truncated checkpoint")?;
        pos += n;
        Ok(s)
    };
    if take(4)? != CKPT_MAGIC {
        return Err("not an SCM1 checkpoint".into());
    }
    let u64_of = |s: &[u8]| u64::from_le_bytes(s.try_into().expect("8 bytes"));
    let desc_len = u64_of(take(8)?) as usize;
    let desc = std::str::from_utf8(take(desc_len)?).map_err(|_| "descriptor is not UTF-8")?;
    let arch = Architecture::from_descriptor(desc).map_err(|e| e.to_string())?;
    let count = u64_of(take(8)?) as usize;
    if count != arch.param_count() {
        return Err(format!(
            "parameter count {count} does not match the descriptor ({})",
            arch.param_count()
        ));
    }
    let mut f64s = |n: usize| -> std::result::Result<Vec<f64>, String> {
        Ok(take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let params = f64s(count)?;
    let rest = bytes.len() - (4 + 8 + desc_len + 8 + 8 * count);
    let adam = if rest == 0 {
        None
    } else if rest == 8 + 16 * count {
        let step = u64_of(&bytes[bytes.len() - rest..bytes.len() - rest + 8]);
        let body = &bytes[bytes.len() - rest + 8..];
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let state = AdamState {
            m: vals[..count].to_vec(),
            v: vals[count..].to_vec(),
            step,
        };
        state.validate().map_err(|e| e.to_string())?;
        Some(state)
    } else {
        return Err(format!("unexpected {rest} trailing bytes"));
    };
    let model = ScoreModel::new(arch, params).map_err(|e| e.to_string())?;
    Ok(Checkpoint { model, adam })
}

pub fn write_checkpoint(path: &Path, model: &ScoreModel, adam: Option<&AdamState>) -> Result<()> {
    write_bytes(path, &encode_checkpoint(model, adam))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_bytes(path)?).map_err(|m| CliError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdfseg_core::sdf::{encode_sdf, SdfConfig};

    #[test]
    fn pgm_round_trip_and_header_variants() {
        let px = vec![0, 255, 7, 128, 1, 2];
        let bytes = encode_pgm(3, 2, &px);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(decode_pgm(&bytes).unwrap(), (3, 2, px));
        let commented = b"P5\n# made by hand\n2 1\n# max\n1\n\x01\x00";
        assert_eq!(decode_pgm(commented).unwrap(), (2, 1, vec![255, 0]));
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn raster_round_trip() {
        let mask = BinaryMask::from_fn(5, 4, |x, y| x > 1 && y > 0);
        let sdf = encode_sdf(&mask, &SdfConfig::new(3.0, 0.0).unwrap());
        let bytes = encode_raster(sdf.field(), sdf.delta());
        assert_eq!(bytes.len(), 16 + 4 * 20);
        assert_eq!(&bytes[..4], b"SDF1");
        let (f, d) = decode_raster(&bytes).unwrap();
        assert_eq!(d, 3.0);
        for (a, b) in f.values().iter().zip(sdf.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        // decoding survives the f32 round trip
        let back = SdfMap::new(f, d).unwrap();
        assert_eq!(sdfseg_core::sdf::decode_mask(&back, 0.0), mask);
        assert!(decode_raster(&bytes[..20]).is_err());
        assert!(decode_raster(b"SDF2xxxxxxxxxxxx").is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = ScoreModel::random(Architecture::tiny(), 3, 1.0).unwrap();
        let bytes = encode_checkpoint(&model, None);
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.adam, None);

        let mut adam = AdamState::new(model.num_params());
        adam.step = 9;
        adam.m[3] = 0.25;
        adam.v[4] = 2.0;
        let bytes = encode_checkpoint(&model, Some(&adam));
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.adam, Some(adam));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
    }
}
