use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RopeStage {
    Pretrain,
    Ext1,
    Ext2,
}

impl FromStr for RopeStage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(RopeStage::Pretrain),
            "ext1" => Ok(RopeStage::Ext1),
            "ext2" => Ok(RopeStage::Ext2),
            other => Err(Error::Config(format!(
                "unknown RoPE stage `{other}` (expected pretrain, ext1 or ext2)"
            ))),
        }
    }
}

impl fmt::Display for RopeStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RopeStage::Pretrain => "pretrain",
            RopeStage::Ext1 => "ext1",
            RopeStage::Ext2 => "ext2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub stage: RopeStage,
    pub seq_len: u32,
    /// Base frequency.
    pub theta: f64,
    pub head_dim: usize,
}

impl RopeConfig {
    pub fn with_head_dim(self, head_dim: usize) -> Self {
        RopeConfig { head_dim, ..self }
    }

    /// Per-pair frequency `theta^(-2i/d)`.
    pub fn frequency(&self, i: usize) -> f64 {
        self.theta.powf(-(2.0 * i as f64) / self.head_dim as f64)
    }
}

/// Context length and base frequency for pre-training and the two
/// length-extension stages. Head dimension defaults to 128.
pub fn rope_config(stage: RopeStage) -> RopeConfig {
    let (seq_len, theta) = match stage {
        RopeStage::Pretrain => (4_096, 1.0e4),
        RopeStage::Ext1 => (32_768, 8.0e6),
        RopeStage::Ext2 => (131_072, 1.28e8),
    };
    RopeConfig { stage, seq_len, theta, head_dim: 128 }
}

/// Rotation angle `position · ω_i` for each of the `d/2` pairs.
pub fn rotation_angles(position: u64, cfg: &RopeConfig) -> Vec<f64> {
    (0..cfg.head_dim / 2).map(|i| position as f64 * cfg.frequency(i)).collect()
}

/// Rotates consecutive pairs `(v[2i], v[2i+1])` by `position · ω_i`.
pub fn rope_rotate(v: &[f64], position: u64, cfg: &RopeConfig) -> Result<Vec<f64>> {
    if !cfg.head_dim.is_multiple_of(2) || !v.len().is_multiple_of(2) {
        return Err(Error::Invalid(format!(
            "RoPE needs an even dimension (vector {}, head_dim {})",
            v.len(),
            cfg.head_dim
        )));
    }
    if v.len() != cfg.head_dim {
        return Err(Error::Invalid(format!(
            "vector length {} does not match head_dim {}",
            v.len(),
            cfg.head_dim
        )));
    }
    let mut out = Vec::with_capacity(v.len());
    for (pair, angle) in v.chunks_exact(2).zip(rotation_angles(position, cfg)) {
        let (sin, cos) = angle.sin_cos();
        out.push(pair[0] * cos - pair[1] * sin);
        out.push(pair[0] * sin + pair[1] * cos);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_constants() {
        let p = rope_config(RopeStage::Pretrain);
        assert_eq!((p.seq_len, p.theta), (4_096, 10_000.0));
        let e1 = rope_config(RopeStage::Ext1);
        assert_eq!((e1.seq_len, e1.theta), (32_768, 8_000_000.0));
        let e2 = rope_config(RopeStage::Ext2);
        assert_eq!((e2.seq_len, e2.theta), (131_072, 128_000_000.0));
        assert!("ext3".parse::<RopeStage>().is_err());
        assert_eq!("ext2".parse::<RopeStage>().unwrap(), RopeStage::Ext2);
    }

    #[test]
    fn zero_position_is_identity() {
        let cfg = rope_config(RopeStage::Pretrain).with_head_dim(4);
        let v = [1.0, -2.0, 3.5, 0.25];
        assert_eq!(rope_rotate(&v, 0, &cfg).unwrap(), v.to_vec());
    }

    #[test]
    fn odd_or_mismatched_dims_rejected() {
        let cfg = rope_config(RopeStage::Pretrain).with_head_dim(3);
        assert!(rope_rotate(&[1.0, 2.0, 3.0], 1, &cfg).is_err());
        let cfg = rope_config(RopeStage::Pretrain).with_head_dim(4);
        assert!(rope_rotate(&[1.0, 2.0], 1, &cfg).is_err());
    }

    #[test]
    fn first_pair_rotates_by_position() {
        let cfg = rope_config(RopeStage::Ext2).with_head_dim(2);
        let out = rope_rotate(&[1.0, 0.0], 1, &cfg).unwrap();
        assert!((out[0] - 1f64.cos()).abs() < 1e-15 && (out[1] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn larger_theta_slows_rotation() {
        let stages = [RopeStage::Pretrain, RopeStage::Ext1, RopeStage::Ext2];
        let angles: Vec<Vec<f64>> =
            stages.iter().map(|&s| rotation_angles(1000, &rope_config(s))).collect();
        for ((a, b), c) in angles[0].iter().zip(&angles[1]).zip(&angles[2]).skip(1) {
            assert!(a > b && b > c);
        }
        assert!(angles.iter().all(|a| a[0] == 1000.0));
    }
}
