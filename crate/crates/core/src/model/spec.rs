use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::transformer::Dims;

/// Inclusive, 1-based layer range as written in `E3-8` / `C1-6`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerRange {
    pub first: usize,
    pub last: usize,
}

impl LayerRange {
    pub fn new(first: usize, last: usize) -> Self {
        LayerRange { first, last }
    }

    /// `layer` is 1-based.
    pub fn contains(&self, layer: usize) -> bool {
        (self.first..=self.last).contains(&layer)
    }

    pub fn len(&self) -> usize {
        if self.last < self.first {
            0
        } else {
            self.last - self.first + 1
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, what: &str, layers: usize) -> Result<()> {
        if self.first == 0 || self.last < self.first || self.last > layers {
            return Err(Error::Spec(format!(
                "{what} range {self} outside layers 1-{layers}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

impl FromStr for LayerRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Spec(format!("bad layer range `{s}`"));
        let (a, b) = s.split_once('-').ok_or_else(bad)?;
        let first = a.trim().parse().map_err(|_| bad())?;
        let last = b.trim().parse().map_err(|_| bad())?;
        Ok(LayerRange { first, last })
    }
}

impl Serialize for LayerRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Encoder/decoder depths, the tied layer ranges and the cross-attention
/// range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingSpec {
    pub enc_layers: usize,
    pub dec_layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enc_shared: Option<LayerRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dec_shared: Option<LayerRange>,
    pub cross_range: LayerRange,
    #[serde(default)]
    pub dims: Dims,
}

impl SharingSpec {
    /// 4/4 layers, top two encoder layers tied, bottom two decoder layers
    /// cross-attend.
    pub fn desk() -> Self {
        SharingSpec {
            enc_layers: 4,
            dec_layers: 4,
            enc_shared: Some(LayerRange::new(3, 4)),
            dec_shared: None,
            cross_range: LayerRange::new(1, 2),
            dims: Dims::default(),
        }
    }

    /// Large-scale layout: 9 encoder and 12 decoder layers, E4-9.
    pub fn full_scale() -> Self {
        SharingSpec {
            enc_layers: 9,
            dec_layers: 12,
            enc_shared: Some(LayerRange::new(4, 9)),
            dec_shared: None,
            cross_range: LayerRange::new(1, 6),
            dims: Dims {
                d_model: 512,
                d_ff: 2048,
                n_heads: 8,
                ..Dims::default()
            },
        }
    }

    /// Builds a spec from range notation such as `E3-8,C1-10` or `DC3-8`.
    /// `DCi-j` sets both the shared decoder range and the cross range.
    /// Omitting `C` means every decoder layer cross-attends.
    pub fn from_notation(
        notation: &str,
        enc_layers: usize,
        dec_layers: usize,
        dims: Dims,
    ) -> Result<Self> {
        let mut spec = SharingSpec {
            enc_layers,
            dec_layers,
            enc_shared: None,
            dec_shared: None,
            cross_range: LayerRange::new(1, dec_layers),
            dims,
        };
        for part in notation.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (tag, range) = part
                .find(|c: char| c.is_ascii_digit())
                .map(|i| part.split_at(i))
                .ok_or_else(|| Error::Spec(format!("bad spec item `{part}`")))?;
            let r: LayerRange = range.parse()?;
            match tag.to_ascii_uppercase().as_str() {
                "E" => spec.enc_shared = Some(r),
                "D" => spec.dec_shared = Some(r),
                "C" => spec.cross_range = r,
                "DC" | "CD" => {
                    spec.dec_shared = Some(r);
                    spec.cross_range = r;
                }
                _ => return Err(Error::Spec(format!("unknown spec tag `{tag}` in `{part}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn notation(&self) -> String {
        let mut parts = Vec::new();
        if let Some(e) = self.enc_shared {
            parts.push(format!("E{e}"));
        }
        match self.dec_shared {
            Some(d) if d == self.cross_range => parts.push(format!("DC{d}")),
            Some(d) => {
                parts.push(format!("D{d}"));
                parts.push(format!("C{}", self.cross_range));
            }
            None => parts.push(format!("C{}", self.cross_range)),
        }
        parts.join(",")
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Spec(
                "encoder and decoder need at least one layer".into(),
            ));
        }
        if self.cross_range.is_empty() {
            return Err(Error::Spec("cross-attention range is empty".into()));
        }
        self.cross_range.check("cross", self.dec_layers)?;
        if let Some(e) = self.enc_shared {
            e.check("shared encoder", self.enc_layers)?;
        }
        if let Some(d) = self.dec_shared {
            d.check("shared decoder", self.dec_layers)?;
        }
        let d = &self.dims;
        if d.n_heads == 0 || !d.d_model.is_multiple_of(d.n_heads) {
            return Err(Error::Spec(format!(
                "d_model {} not divisible by {} heads",
                d.d_model, d.n_heads
            )));
        }
        if !d.d_model.is_multiple_of(2) || d.d_ff == 0 {
            return Err(Error::Spec("d_model must be even and d_ff positive".into()));
        }
        if !(0.0..1.0).contains(&d.dropout) {
            return Err(Error::Spec(format!("dropout {} outside [0, 1)", d.dropout)));
        }
        Ok(())
    }

    /// `layer` is 1-based.
    pub fn enc_is_shared(&self, layer: usize) -> bool {
        self.enc_shared.is_some_and(|r| r.contains(layer))
    }

    pub fn dec_is_shared(&self, layer: usize) -> bool {
        self.dec_shared.is_some_and(|r| r.contains(layer))
    }

    pub fn has_cross(&self, layer: usize) -> bool {
        self.cross_range.contains(layer)
    }
}

impl Default for SharingSpec {
    fn default() -> Self {
        SharingSpec::desk()
    }
}
