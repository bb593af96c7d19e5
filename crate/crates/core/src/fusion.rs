//! Claim-level modality fusion.
//!
//! The claim image and text features become a short token sequence: the two
//! raw features followed by their sum, difference and elementwise product.
//! Ablation configurations drop tokens but never reorder the survivors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionOp {
    Image,
    Text,
    Add,
    Sub,
    Mul,
}

impl FusionOp {
    pub const ALL: [FusionOp; 5] = [FusionOp::Image, FusionOp::Text, FusionOp::Add, FusionOp::Sub, FusionOp::Mul];

    pub fn name(self) -> &'static str {
        match self {
            FusionOp::Image => "image",
            FusionOp::Text => "text",
            FusionOp::Add => "add",
            FusionOp::Sub => "sub",
            FusionOp::Mul => "mul",
        }
    }

    fn apply(self, img: f32, txt: f32) -> f32 {
        match self {
            FusionOp::Image => img,
            FusionOp::Text => txt,
            FusionOp::Add => img + txt,
            FusionOp::Sub => img - txt,
            FusionOp::Mul => img * txt,
        }
    }
}

impl fmt::Display for FusionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion op '{}' (expected image, text, add, sub or mul)", s)))
    }
}

/// An ordered subset of fusion ops that always contains image and text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<FusionOp>", into = "Vec<FusionOp>")]
pub struct FusionConfig {
    ops: Vec<FusionOp>,
}

impl FusionConfig {
    pub fn new(ops: Vec<FusionOp>) -> Result<Self> {
        if !ops.contains(&FusionOp::Image) || !ops.contains(&FusionOp::Text) {
            bail!(Config, "fusion must include both 'image' and 'text'");
        }
        if ops.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Config, "fusion ops must be distinct and in the order image, text, add, sub, mul");
        }
        Ok(FusionConfig { ops })
    }

    /// All five tokens.
    pub fn full() -> Self {
        FusionConfig { ops: FusionOp::ALL.to_vec() }
    }

    /// Image and text tokens only.
    pub fn concat() -> Self {
        FusionConfig { ops: vec![FusionOp::Image, FusionOp::Text] }
    }

    /// The full configuration minus one element-wise op.
    pub fn without(op: FusionOp) -> Result<Self> {
        if matches!(op, FusionOp::Image | FusionOp::Text) {
            bail!(Config, "the '{}' token cannot be ablated", op);
        }
        Ok(FusionConfig { ops: FusionOp::ALL.into_iter().filter(|&o| o != op).collect() })
    }

    /// The five ablation columns: concat, full, and full minus sub, add, mul.
    pub fn ablations() -> Vec<(&'static str, FusionConfig)> {
        vec![
            ("concat", FusionConfig::concat()),
            ("full", FusionConfig::full()),
            ("no_sub", FusionConfig::without(FusionOp::Sub).unwrap()),
            ("no_add", FusionConfig::without(FusionOp::Add).unwrap()),
            ("no_mul", FusionConfig::without(FusionOp::Mul).unwrap()),
        ]
    }

    pub fn ops(&self) -> &[FusionOp] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig::full()
    }
}

impl TryFrom<Vec<FusionOp>> for FusionConfig {
    type Error = Error;

    fn try_from(ops: Vec<FusionOp>) -> Result<Self> {
        FusionConfig::new(ops)
    }
}

impl From<FusionConfig> for Vec<FusionOp> {
    fn from(c: FusionConfig) -> Self {
        c.ops
    }
}

impl FromStr for FusionConfig {
    type Err = Error;

    /// Comma-separated op names, e.g. `image,text,mul`.
    fn from_str(s: &str) -> Result<Self> {
        let ops = s.split(',').map(|p| p.trim().parse()).collect::<Result<Vec<_>>>()?;
        FusionConfig::new(ops)
    }
}

impl fmt::Display for FusionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.ops.iter().map(|o| o.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Emits `|ops| x dim` tokens, row-major, in config order.
pub fn fuse(image: &[f32], text: &[f32], config: &FusionConfig) -> Result<Vec<f32>> {
    if image.len() != text.len() {
        bail!(Data, "claim image dim {} differs from text dim {}", image.len(), text.len());
    }
    let mut out = Vec::with_capacity(config.len() * image.len());
    for &op in config.ops() {
        out.extend(image.iter().zip(text).map(|(&a, &b)| op.apply(a, b)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_arithmetic() {
        let t = fuse(&[1.0, 2.0], &[3.0, -1.0], &FusionConfig::full()).unwrap();
        assert_eq!(t, vec![1.0, 2.0, 3.0, -1.0, 4.0, 1.0, -2.0, 3.0, 3.0, -2.0]);
    }

    #[test]
    fn equal_inputs_and_zero_text() {
        let v = [0.5, -2.0, 3.0];
        let t = fuse(&v, &v, &FusionConfig::full()).unwrap();
        assert_eq!(t, vec![0.5, -2.0, 3.0, 0.5, -2.0, 3.0, 1.0, -4.0, 6.0, 0.0, 0.0, 0.0, 0.25, 4.0, 9.0]);
        let t = fuse(&v, &[0.0; 3], &FusionConfig::full()).unwrap();
        assert_eq!(t, vec![0.5, -2.0, 3.0, 0.0, 0.0, 0.0, 0.5, -2.0, 3.0, 0.5, -2.0, 3.0, 0.0, -0.0, 0.0]);
    }

    #[test]
    fn ablations_keep_order() {
        let names: Vec<String> = FusionConfig::ablations().iter().map(|(_, c)| c.to_string()).collect();
        assert_eq!(names, vec!["image,text", "image,text,add,sub,mul", "image,text,add,mul", "image,text,sub,mul", "image,text,add,sub"]);
        let t = fuse(&[1.0], &[3.0], &FusionConfig::without(FusionOp::Add).unwrap()).unwrap();
        assert_eq!(t, vec![1.0, 3.0, -2.0, 3.0]);
    }

    #[test]
    fn config_validation() {
        assert!("image,text,mul".parse::<FusionConfig>().is_ok());
        assert!("text,image".parse::<FusionConfig>().is_err());
        assert!("image,add".parse::<FusionConfig>().is_err());
        assert!("image,text,text".parse::<FusionConfig>().is_err());
        assert!("image,text,pow".parse::<FusionConfig>().is_err());
        assert!(FusionConfig::without(FusionOp::Image).is_err());
        let json = serde_json::to_string(&FusionConfig::full()).unwrap();
        assert_eq!(json, r#"["image","text","add","sub","mul"]"#);
        assert!(serde_json::from_str::<FusionConfig>(r#"["image"]"#).is_err());
    }

    #[test]
    fn dim_mismatch() {
        assert!(matches!(fuse(&[1.0], &[1.0, 2.0], &FusionConfig::full()), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn algebraic_properties(
            v in prop::collection::vec((-100.0f32..100.0, -100.0f32..100.0), 1..16),
            alpha in -4.0f32..4.0,
        ) {
            let (a, b): (Vec<f32>, Vec<f32>) = v.into_iter().unzip();
            let d = a.len();
            let ab = fuse(&a, &b, &FusionConfig::full()).unwrap();
            let ba = fuse(&b, &a, &FusionConfig::full()).unwrap();
            for i in 0..d {
                prop_assert_eq!(ab[4 * d + i], ba[4 * d + i]);
                prop_assert_eq!(ab[3 * d + i], -ba[3 * d + i]);
            }
            // alpha = 2^p scales exactly in floating point.
            let s = alpha.round().exp2();
            let sa: Vec<f32> = a.iter().map(|x| x * s).collect();
            let sb: Vec<f32> = b.iter().map(|x| x * s).collect();
            let scaled = fuse(&sa, &sb, &FusionConfig::full()).unwrap();
            for i in 0..d {
                prop_assert_eq!(scaled[2 * d + i], s * ab[2 * d + i]);
                prop_assert_eq!(scaled[3 * d + i], s * ab[3 * d + i]);
            }
        }
    }
}
