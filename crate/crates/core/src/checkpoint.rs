//! Line-oriented `key=value` checkpoint container.
//!
//! ```text
//! railsim-checkpoint
//! format_version=1
//! layout_version=1
//! head=softmax3            # or linear:15
//! layer_dims=242,64,3
//! meta.<key>=<value>       # free-form provenance (seed, config hash, method)
//! norm.count_min=...
//! norm.count_max=...
//! layer.0.weights=...      # row-major, out x in
//! layer.0.biases=...
//! end=<parameter count>
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a load reproduces every parameter
//! bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{NormalizationStats, LAYOUT_VERSION};
use crate::policy::{Head, MlpPolicy};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "railsim-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: MlpPolicy,
    pub stats: NormalizationStats,
    pub meta: BTreeMap<String, String>,
}

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v:?}");
    }
    s
}

fn split_floats(text: &str, key: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad number `{v}` in `{key}`")))
        })
        .collect()
}

pub fn to_text(policy: &MlpPolicy, stats: &NormalizationStats, meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "format_version={FORMAT_VERSION}");
    let _ = writeln!(out, "layout_version={}", policy.layout_version);
    let head = match policy.head() {
        Head::Softmax3 => "softmax3".to_string(),
        Head::Linear(k) => format!("linear:{k}"),
    };
    let _ = writeln!(out, "head={head}");
    let dims: Vec<String> = policy.layer_dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "layer_dims={}", dims.join(","));
    for (k, v) in meta {
        let _ = writeln!(out, "meta.{k}={v}");
    }
    let _ = writeln!(out, "norm.layout_version={}", stats.layout_version);
    let _ = writeln!(out, "norm.fitted={}", stats.fitted);
    let _ = writeln!(out, "norm.count_min={}", join(&stats.count_min));
    let _ = writeln!(out, "norm.count_max={}", join(&stats.count_max));
    for l in 0..policy.n_layers() {
        let _ = writeln!(out, "layer.{l}.weights={}", join(policy.weights(l)));
        let _ = writeln!(out, "layer.{l}.biases={}", join(policy.biases(l)));
    }
    let _ = writeln!(out, "end={}", policy.params().len());
    out
}

pub fn from_text(text: &str, expected_layout: u32) -> Result<Checkpoint> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::CorruptCheckpoint("missing header".into()));
    }
    let mut fields = BTreeMap::new();
    let mut meta = BTreeMap::new();
    let mut end = None;
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::CorruptCheckpoint(format!("malformed line `{line}`")))?;
        if let Some(m) = k.strip_prefix("meta.") {
            meta.insert(m.to_string(), v.to_string());
        } else if k == "end" {
            end = Some(v.to_string());
        } else if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::CorruptCheckpoint(format!("duplicate field `{k}`")));
        }
    }
    let end = end.ok_or_else(|| Error::CorruptCheckpoint("truncated (no end marker)".into()))?;
    let field = |k: &str| {
        fields
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing field `{k}`")))
    };
    let parse_u32 = |k: &str| -> Result<u32> {
        field(k)?
            .parse()
            .map_err(|_| Error::CorruptCheckpoint(format!("bad integer in `{k}`")))
    };

    if parse_u32("format_version")? != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint("unsupported format version".into()));
    }
    let layout = parse_u32("layout_version")?;
    if layout != expected_layout {
        return Err(Error::LayoutVersion {
            expected: expected_layout,
            found: layout,
        });
    }
    let head = match field("head")? {
        "softmax3" => Head::Softmax3,
        h => match h.strip_prefix("linear:").and_then(|k| k.parse().ok()) {
            Some(k) => Head::Linear(k),
            None => return Err(Error::CorruptCheckpoint(format!("unknown head `{h}`"))),
        },
    };
    let dims = field("layer_dims")?
        .split(',')
        .map(|d| d.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Error::CorruptCheckpoint("bad layer_dims".into()))?;
    if dims.len() < 2 || *dims.last().unwrap() != head.outputs() {
        return Err(Error::CorruptCheckpoint(format!(
            "layer_dims {dims:?} do not match head"
        )));
    }
    let expected_input = head.feature_mode().dim();
    if dims[0] != expected_input {
        return Err(Error::Dimension {
            expected: expected_input,
            actual: dims[0],
        });
    }

    let mut params = Vec::new();
    for l in 0..dims.len() - 1 {
        let w = split_floats(field(&format!("layer.{l}.weights"))?, "weights")?;
        let b = split_floats(field(&format!("layer.{l}.biases"))?, "biases")?;
        if w.len() != dims[l] * dims[l + 1] || b.len() != dims[l + 1] {
            return Err(Error::CorruptCheckpoint(format!("layer {l} has the wrong size")));
        }
        params.extend(w);
        params.extend(b);
    }
    if end != params.len().to_string() {
        return Err(Error::CorruptCheckpoint("parameter count mismatch".into()));
    }
    let mut policy = MlpPolicy::from_params(dims, head, params)?;
    policy.layout_version = layout;

    let arr5 = |k: &str| -> Result<[f64; 5]> {
        let v = split_floats(field(k)?, k)?;
        v.try_into()
            .map_err(|_| Error::CorruptCheckpoint(format!("`{k}` needs 5 values")))
    };
    let stats = NormalizationStats {
        layout_version: parse_u32("norm.layout_version")?,
        count_min: arr5("norm.count_min")?,
        count_max: arr5("norm.count_max")?,
        fitted: field("norm.fitted")? == "true",
    };
    Ok(Checkpoint { policy, stats, meta })
}

pub fn save_checkpoint(
    path: &Path,
    policy: &MlpPolicy,
    stats: &NormalizationStats,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    std::fs::write(path, to_text(policy, stats, meta)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint written for the current feature layout.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_for(path, LAYOUT_VERSION)
}

pub fn load_checkpoint_for(path: &Path, expected_layout: u32) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, expected_layout)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::FeatureMode;

    fn fixture() -> (MlpPolicy, NormalizationStats) {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let p = MlpPolicy::new(FeatureMode::Simulation.dim(), &[7, 5], Head::Softmax3, &mut r);
        let s = NormalizationStats {
            count_min: [0.0, 0.0, 1.0, 1.0, 2.0],
            count_max: [3.0, 4.0, 5.0, 6.0, 7.5],
            fitted: true,
            ..Default::default()
        };
        (p, s)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (p, s) = fixture();
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "7".to_string());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        save_checkpoint(&path, &p, &s, &meta).unwrap();
        let c = load_checkpoint(&path).unwrap();
        assert_eq!(c.policy.params(), p.params());
        assert_eq!(c.stats, s);
        assert_eq!(c.meta, meta);
        let mut r = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let x: Vec<f64> = (0..p.input_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
            assert_eq!(p.forward(&x).unwrap(), c.policy.forward(&x).unwrap());
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let (p, s) = fixture();
        let text = to_text(&p, &s, &BTreeMap::new());
        let cut = &text[..text.len() / 2];
        assert!(matches!(
            from_text(cut, LAYOUT_VERSION),
            Err(Error::CorruptCheckpoint(_))
        ));
        assert!(matches!(
            from_text("", LAYOUT_VERSION),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn layout_version_is_guarded() {
        let (p, s) = fixture();
        let text = to_text(&p, &s, &BTreeMap::new());
        assert!(matches!(
            from_text(&text, LAYOUT_VERSION + 1),
            Err(Error::LayoutVersion { found: 1, expected: 2 })
        ));
    }

    #[test]
    fn input_dimension_must_match_layout() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let p = MlpPolicy::new(10, &[4], Head::Softmax3, &mut r);
        let text = to_text(&p, &fixture().1, &BTreeMap::new());
        assert!(matches!(from_text(&text, LAYOUT_VERSION), Err(Error::Dimension { .. })));
    }
}
