//! On-disk cache of null draws: header `N, K, j`, then the `N × K` draws in
//! row-major order and the per-row acceptance rates.

use std::path::Path;

use ndarray::Array2;

use super::mh::NullSamples;
use crate::container::{Container, MAGIC_NULLS};
use crate::error::{Error, Result};

impl NullSamples {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(MAGIC_NULLS);
        c.header = vec![self.n_rows() as u32, self.k() as u32, self.feature as u32];
        c.arrays.push(self.samples.iter().copied().collect());
        c.arrays.push(self.acceptance_rate.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.magic != MAGIC_NULLS {
            return Err(Error::format("null cache", "not a null-sample cache"));
        }
        if c.header.len() != 3 {
            return Err(Error::format("null cache", format!("header has {} words, expected 3", c.header.len())));
        }
        let n = c.header[0] as usize;
        let k = c.header[1] as usize;
        let feature = c.header[2] as usize;
        let total = n.checked_mul(k).ok_or_else(|| Error::format("null cache", "header overflow"))?;
        let mut cur = c.array_cursor();
        let draws = cur.take("samples", Some(total))?;
        let rates = cur.take("acceptance rates", Some(n))?;
        cur.finish()?;
        if draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("null cache", "non-finite null draw"));
        }
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::format("null cache", "acceptance rate outside [0, 1]"));
        }
        Ok(NullSamples {
            feature,
            samples: Array2::from_shape_vec((n, k), draws.to_vec()).map_err(|e| Error::format("null cache", e.to_string()))?,
            acceptance_rate: rates.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::decode_expecting(bytes, MAGIC_NULLS)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_from(path, MAGIC_NULLS)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let ns = NullSamples {
            feature: 3,
            samples: Array2::from_shape_fn((4, 5), |(i, k)| i as f64 - 0.25 * k as f64),
            acceptance_rate: vec![0.1, 0.5, 1.0, 0.0],
        };
        let bytes = ns.to_bytes();
        assert_eq!(&bytes[..4], b"FSNS");
        assert_eq!(NullSamples::from_bytes(&bytes).unwrap(), ns);
    }

    #[test]
    fn out_of_range_rate_is_rejected() {
        let ns = NullSamples {
            feature: 0,
            samples: Array2::zeros((1, 1)),
            acceptance_rate: vec![1.5],
        };
        assert!(NullSamples::from_bytes(&ns.to_bytes()).is_err());
    }
}
