use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};

/// Descriptor of the conditional encoder-decoder.
///
/// ```text
/// [c_in(sigma) * m, x] --conv--> w --res+film--> w ----------------skip----+
///                                                 |                         |
///                                       conv/2 --> 2w --res+film--> up x2 --+--> concat 3w --conv--> w --conv--> noise
/// ```
///
/// `c_in(sigma) = 1 / sqrt(1 + sigma^2)` keeps the field channel at unit
/// scale across noise levels. The noise level enters through sin/cos
/// features of `ln sigma` (`embed_freqs` angular frequencies spaced
/// geometrically in `[freq_min, freq_max]`), a two-layer dense head, and a
/// per-channel scale-and-shift after each residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub width: usize,
    pub embed_freqs: usize,
    pub embed_hidden: usize,
    pub freq_min: f64,
    pub freq_max: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            width: 32,
            embed_freqs: 16,
            embed_hidden: 64,
            freq_min: 0.25,
            freq_max: 8.0,
        }
    }
}

pub(crate) const ARCH_NAME: &str = "cond-unet-v1";

/// One named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in used for initialization; 0 for biases.
    pub fan_in: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl Architecture {
    /// Small configuration for tests and gradient checks.
    pub fn tiny() -> Self {
        Self {
            width: 4,
            embed_freqs: 3,
            embed_hidden: 6,
            freq_min: 0.25,
            freq_max: 8.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.embed_freqs == 0 || self.embed_hidden == 0 {
            return Err(Error::config("architecture sizes must be positive"));
        }
        if !(self.freq_min > 0.0) || !(self.freq_max >= self.freq_min) || !self.freq_max.is_finite() {
            return Err(Error::config("embedding frequencies must satisfy 0 < min <= max"));
        }
        Ok(())
    }

    pub fn embed_dim(&self) -> usize {
        2 * self.embed_freqs
    }

    /// Width of the scale/shift head: gamma and beta for both residual blocks.
    pub fn film_dim(&self) -> usize {
        2 * (self.width + 2 * self.width)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let f = self.embed_freqs;
        (0..f)
            .map(|i| {
                if f == 1 {
                    self.freq_min
                } else {
                    self.freq_min * (self.freq_max / self.freq_min).powf(i as f64 / (f - 1) as f64)
                }
            })
            .collect()
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let w = self.width;
        let conv = |c_out: usize, c_in: usize| (alloc::vec![c_out, c_in, 3, 3], c_in * 9);
        let specs: [(&'static str, (Vec<usize>, usize)); 20] = [
            ("in.weight", conv(w, 2)),
            ("in.bias", (alloc::vec![w], 0)),
            ("res1.conv1.weight", conv(w, w)),
            ("res1.conv1.bias", (alloc::vec![w], 0)),
            ("res1.conv2.weight", conv(w, w)),
            ("res1.conv2.bias", (alloc::vec![w], 0)),
            ("down.weight", conv(2 * w, w)),
            ("down.bias", (alloc::vec![2 * w], 0)),
            ("res2.conv1.weight", conv(2 * w, 2 * w)),
            ("res2.conv1.bias", (alloc::vec![2 * w], 0)),
            ("res2.conv2.weight", conv(2 * w, 2 * w)),
            ("res2.conv2.bias", (alloc::vec![2 * w], 0)),
            ("up.weight", conv(w, 3 * w)),
            ("up.bias", (alloc::vec![w], 0)),
            ("out.weight", conv(1, w)),
            ("out.bias", (alloc::vec![1], 0)),
            (
                "embed.dense1.weight",
                (alloc::vec![self.embed_hidden, self.embed_dim()], self.embed_dim()),
            ),
            ("embed.dense1.bias", (alloc::vec![self.embed_hidden], 0)),
            (
                "embed.dense2.weight",
                (alloc::vec![self.film_dim(), self.embed_hidden], self.embed_hidden),
            ),
            ("embed.dense2.bias", (alloc::vec![self.film_dim()], 0)),
        ];
        let mut offset = 0;
        specs
            .into_iter()
            .map(|(name, (shape, fan_in))| {
                let block = ParamBlock {
                    name,
                    shape,
                    offset,
                    fan_in,
                };
                offset += block.len();
                block
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(ParamBlock::len).sum()
    }

    /// Canonical text form stored in checkpoints.
    pub fn descriptor(&self) -> String {
        format!(
            "arch = {ARCH_NAME}\nwidth = {}\nembed_freqs = {}\nembed_hidden = {}\nfreq_min = {:?}\nfreq_max = {:?}\n",
            self.width, self.embed_freqs, self.embed_hidden, self.freq_min, self.freq_max
        )
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut arch = None;
        let (mut width, mut freqs, mut hidden, mut fmin, mut fmax) = (None, None, None, None, None);
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed descriptor line `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::config(format!("bad value for `{key}`: `{value}`"));
            match key {
                "arch" => arch = Some(value.to_string()),
                "width" => width = Some(value.parse::<usize>().map_err(|_| bad())?),
                "embed_freqs" => freqs = Some(value.parse::<usize>().map_err(|_| bad())?),
                "embed_hidden" => hidden = Some(value.parse::<usize>().map_err(|_| bad())?),
                "freq_min" => fmin = Some(value.parse::<f64>().map_err(|_| bad())?),
                "freq_max" => fmax = Some(value.parse::<f64>().map_err(|_| bad())?),
                _ => return Err(Error::config(format!("unknown descriptor key `{key}`"))),
            }
        }
        if arch.as_deref() != Some(ARCH_NAME) {
            return Err(Error::config(format!("unsupported architecture {arch:?}")));
        }
        let missing = |k: &str| Error::config(format!("descriptor is missing `{k}`"));
        let out = Self {
            width: width.ok_or_else(|| missing("width"))?,
            embed_freqs: freqs.ok_or_else(|| missing("embed_freqs"))?,
            embed_hidden: hidden.ok_or_else(|| missing("embed_hidden"))?,
            freq_min: fmin.ok_or_else(|| missing("freq_min"))?,
            freq_max: fmax.ok_or_else(|| missing("freq_max"))?,
        };
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_round_trip() {
        for arch in [Architecture::default(), Architecture::tiny()] {
            let text = arch.descriptor();
            assert_eq!(Architecture::from_descriptor(&text).unwrap(), arch);
        }
        assert!(Architecture::from_descriptor("arch = other\n").is_err());
        assert!(Architecture::from_descriptor("arch = cond-unet-v1\nwidth = 4\n").is_err());
    }

    #[test]
    fn layout_is_contiguous() {
        let arch = Architecture::default();
        let layout = arch.layout();
        let mut next = 0;
        for b in &layout {
            assert_eq!(b.offset, next);
            next += b.len();
        }
        assert_eq!(next, arch.param_count());
        // 2->32, 32->32 x2, 32->64, 64->64 x2, 96->32, 32->1 convs
        let convs = 9 * (2 * 32 + 2 * 32 * 32 + 32 * 64 + 2 * 64 * 64 + 96 * 32 + 32);
        let biases = 32 * 3 + 64 * 3 + 32 + 1;
        let head = 64 * 32 + 64 + 192 * 64 + 192;
        assert_eq!(arch.param_count(), convs + biases + head);
    }
}
