//! Architecture builders (VGG14, MLP head) and the checkpoint format.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, Normalization};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{shape_flow, LayerSpec, Network, Scalar};

/// Number of scene classes.
pub const SCENE_CLASSES: usize = 10;

/// Width scales accepted by [`build_vgg14`].
pub const VGG_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Vgg14,
    Mlp,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Vgg14 => "vgg14",
            Family::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vgg14" => Ok(Family::Vgg14),
            "mlp" => Ok(Family::Mlp),
            _ => Err(Error::Spec(format!("unknown architecture {s:?} (vgg14, mlp)"))),
        }
    }
}

/// Parses a width scale written as a decimal (`0.125`) or fraction (`1/8`).
pub fn parse_scale(s: &str) -> Result<f64> {
    let bad = || Error::Spec(format!("invalid scale {s:?}"));
    let value = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            n / d
        }
        None => s.trim().parse().map_err(|_| bad())?,
    };
    if !(value > 0.0 && value <= 1.0) {
        return Err(Error::Spec(format!("scale must lie in (0, 1], got {s}")));
    }
    Ok(value)
}

fn scaled(width: usize, scale: f64) -> usize {
    ((width as f64 * scale).round() as usize).max(1)
}

/// A declarative layer ladder grouped into the rows of its table.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub family: Family,
    pub scale: f64,
    pub input_dims: Vec<usize>,
    pub classes: usize,
    pub rows: Vec<Vec<LayerSpec>>,
}

impl ArchitectureSpec {
    /// Identifier such as `vgg14@0.125`.
    pub fn id(&self) -> String {
        format!("{}@{}", self.family, self.scale)
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        self.rows.iter().flatten().copied().collect()
    }

    /// Per-sample output dims at the end of every row.
    pub fn row_outputs(&self) -> Result<Vec<Vec<usize>>> {
        let flow = shape_flow(&self.input_dims, &self.layers())?;
        let mut end = 0;
        Ok(self
            .rows
            .iter()
            .map(|row| {
                end += row.len();
                flow[end - 1].clone()
            })
            .collect())
    }

    /// Conv and FC layers, the ones holding weights.
    pub fn weight_layer_count(&self) -> usize {
        self.layers().iter().filter(|l| l.is_weight_layer()).count()
    }

    pub fn validate(&self) -> Result<()> {
        let out = shape_flow(&self.input_dims, &self.layers())?;
        if out.last() != Some(&vec![self.classes]) {
            return Err(Error::Spec(format!(
                "{} ends in {:?}, expected [{}]",
                self.id(),
                out.last(),
                self.classes
            )));
        }
        Ok(())
    }

    pub fn build<F: Scalar>(&self, seed: u64) -> Result<Network<F>> {
        self.validate()?;
        Network::new(&self.input_dims, &self.layers(), seed)
    }

    /// Rebuilds a spec from its identifier, input dims and class count.
    pub fn from_id(id: &str, input_dims: &[usize], classes: usize) -> Result<Self> {
        let (family, scale) = id
            .split_once('@')
            .ok_or_else(|| Error::Format(format!("malformed architecture id {id:?}")))?;
        let scale = parse_scale(scale)?;
        match family.parse::<Family>()? {
            Family::Vgg14 => build_vgg14(input_dims, classes, scale),
            Family::Mlp => match input_dims {
                [d] => build_mlp(*d, classes, scale),
                _ => Err(Error::Spec(format!("mlp input must be a vector, got {input_dims:?}"))),
            },
        }
    }
}

/// The VGG14 ladder: twelve BN-Conv-ReLU-BN blocks in four stages, then
/// FC-ReLU-Dropout and FC-Softmax. All widths are multiplied by `scale`.
///
/// At full width the input must be H×H×6; narrower variants accept any
/// channel count. The side must survive three 2×2 poolings.
pub fn build_vgg14(input_dims: &[usize], classes: usize, scale: f64) -> Result<ArchitectureSpec> {
    if !VGG_SCALES.contains(&scale) {
        return Err(Error::Spec(format!("vgg14 scale must be one of 1, 1/2, 1/4, 1/8, got {scale}")));
    }
    let [h, w, c] = input_dims else {
        return Err(Error::Spec(format!("vgg14 expects HxWxC input, got {input_dims:?}")));
    };
    if h != w || *h == 0 {
        return Err(Error::Spec(format!("vgg14 input must be square, got {h}x{w}")));
    }
    if h % 8 != 0 {
        return Err(Error::Spec(format!("vgg14 input side {h} is not divisible by 8")));
    }
    if scale == 1.0 && *c != 6 {
        return Err(Error::Spec(format!("full-width vgg14 expects 6 channels, got {c}")));
    }
    if *c == 0 || classes == 0 {
        return Err(Error::Spec("channels and classes must be >= 1".into()));
    }
    // (filters, blocks, dropout rate)
    let stages = [(64, 2, 0.25), (128, 2, 0.30), (256, 4, 0.35), (512, 4, 0.35)];
    let mut rows = Vec::new();
    for (s, &(filters, blocks, rate)) in stages.iter().enumerate() {
        for b in 0..blocks {
            let mut row = vec![
                LayerSpec::BatchNorm,
                LayerSpec::Conv { filters: scaled(filters, scale) },
                LayerSpec::Relu,
                LayerSpec::BatchNorm,
            ];
            if b + 1 == blocks {
                row.push(if s + 1 == stages.len() {
                    LayerSpec::GlobalAvgPool
                } else {
                    LayerSpec::AvgPool
                });
            }
            row.push(LayerSpec::Dropout { rate });
            rows.push(row);
        }
    }
    rows.push(vec![
        LayerSpec::Dense { units: scaled(1024, scale) },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.40 },
    ]);
    rows.push(vec![LayerSpec::Dense { units: classes }, LayerSpec::Softmax]);
    let spec = ArchitectureSpec {
        family: Family::Vgg14,
        scale,
        input_dims: input_dims.to_vec(),
        classes,
        rows,
    };
    spec.validate()?;
    Ok(spec)
}

/// The embedding head: three FC-ReLU-Dropout(40%) layers of 8192·s, 8192·s
/// and 1024·s units, then FC-Softmax.
pub fn build_mlp(dim: usize, classes: usize, scale: f64) -> Result<ArchitectureSpec> {
    if dim < 1 {
        return Err(Error::Spec("mlp input dimension must be >= 1".into()));
    }
    if !(scale > 0.0 && scale <= 1.0) || classes == 0 {
        return Err(Error::Spec(format!("invalid mlp scale {scale} or classes {classes}")));
    }
    let hidden = |units: usize| {
        vec![
            LayerSpec::Dense { units: scaled(units, scale) },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.40 },
        ]
    };
    let spec = ArchitectureSpec {
        family: Family::Mlp,
        scale,
        input_dims: vec![dim],
        classes,
        rows: vec![
            hidden(8192),
            hidden(8192),
            hidden(1024),
            vec![LayerSpec::Dense { units: classes }, LayerSpec::Softmax],
        ],
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_parsing() {
        assert_eq!(parse_scale("1/8").unwrap(), 0.125);
        assert_eq!(parse_scale("0.5").unwrap(), 0.5);
        assert!(parse_scale("0").is_err());
        assert!(parse_scale("2").is_err());
        assert!(parse_scale("x").is_err());
    }

    #[test]
    fn vgg_input_rules() {
        assert!(build_vgg14(&[128, 128, 6], 10, 1.0).is_ok());
        assert!(build_vgg14(&[128, 64, 6], 10, 1.0).is_err());
        assert!(build_vgg14(&[32, 32, 3], 10, 1.0).is_err());
        assert!(build_vgg14(&[32, 32, 3], 10, 0.125).is_ok());
        assert!(build_vgg14(&[30, 30, 6], 10, 0.125).is_err());
        assert!(build_vgg14(&[32, 32, 6], 10, 0.3).is_err());
    }

    #[test]
    fn eighth_width_on_32px_pools_to_64() {
        let spec = build_vgg14(&[32, 32, 6], 10, 0.125).unwrap();
        let outs = spec.row_outputs().unwrap();
        assert_eq!(outs[11], vec![64]);
        assert_eq!(outs[12], vec![128]);
        assert_eq!(outs[13], vec![10]);
        assert_eq!(spec.weight_layer_count(), 14);
    }

    #[test]
    fn mlp_sixty_fourth_width() {
        let spec = build_mlp(2048, 10, 1.0 / 64.0).unwrap();
        let outs: Vec<usize> = spec.row_outputs().unwrap().into_iter().map(|d| d[0]).collect();
        assert_eq!(outs, vec![128, 128, 16, 10]);
        assert!(build_mlp(0, 10, 1.0).is_err());
    }

    #[test]
    fn id_round_trip() {
        let spec = build_vgg14(&[32, 32, 6], 10, 0.125).unwrap();
        assert_eq!(spec.id(), "vgg14@0.125");
        assert_eq!(ArchitectureSpec::from_id(&spec.id(), &[32, 32, 6], 10).unwrap(), spec);
        let mlp = build_mlp(64, 4, 1.0 / 64.0).unwrap();
        assert_eq!(ArchitectureSpec::from_id(&mlp.id(), &[64], 4).unwrap(), mlp);
        assert!(ArchitectureSpec::from_id("resnet@1", &[64], 4).is_err());
    }
}
