//! The asset library: optimized prompts indexed by domain coordinates.
//!
//! An asset packages one domain's adaptation knowledge as a triplet: the
//! optimized prompt, the prompt-free final-layer feature statistics that
//! locate the domain, and the prediction entropy of the adapted policy as an
//! uncertainty score. The library holds at most `capacity` assets; inserting
//! at capacity merges the newcomer into its 2-Wasserstein nearest neighbor by
//! elementwise averaging.
//!
//! The on-disk format is a JSON document (`idea-assets/1`) with every real
//! number rendered at 17 significant decimal digits so the round trip is
//! bit-exact.

use std::fmt::Write as _;

use crate::error::{IdeaError, Result};
use crate::linalg::Matrix;
use crate::prompt::SoftPrompt;
use crate::stats::{w2_distance, FeatureStats};
use crate::Real;

pub const FORMAT_VERSION: &str = "idea-assets/1";

/// One stored unit of adaptation knowledge.
#[derive(Debug, Clone)]
pub struct Asset<T> {
    prompt: SoftPrompt<T>,
    coords: FeatureStats<T>,
    uncertainty: T,
}

impl<T: Real> Asset<T> {
    pub fn new(prompt: SoftPrompt<T>, coords: FeatureStats<T>, uncertainty: T) -> Result<Self> {
        if !uncertainty.is_finite() || uncertainty < T::zero() {
            return Err(IdeaError::invalid("uncertainty must be finite and >= 0"));
        }
        Ok(Asset {
            prompt,
            coords,
            uncertainty,
        })
    }

    pub fn prompt(&self) -> &SoftPrompt<T> {
        &self.prompt
    }

    pub fn coords(&self) -> &FeatureStats<T> {
        &self.coords
    }

    pub fn uncertainty(&self) -> T {
        self.uncertainty
    }
}

/// Capacity-bounded, dimension-consistent collection of assets.
#[derive(Debug, Clone)]
pub struct AssetLibrary<T> {
    assets: Vec<Asset<T>>,
    capacity: usize,
    prompt_len: usize,
    feature_dim: usize,
}

impl<T: Real> AssetLibrary<T> {
    pub fn new(capacity: usize, prompt_len: usize, feature_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(IdeaError::invalid("capacity must be positive"));
        }
        if prompt_len == 0 || feature_dim == 0 {
            return Err(IdeaError::invalid("prompt_len and feature_dim must be positive"));
        }
        Ok(AssetLibrary {
            assets: Vec::new(),
            capacity,
            prompt_len,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn assets(&self) -> &[Asset<T>] {
        &self.assets
    }

    fn check_asset(&self, asset: &Asset<T>) -> Result<()> {
        if asset.prompt.num_tokens() != self.prompt_len
            || asset.prompt.feature_dim() != self.feature_dim
            || asset.coords.dim() != self.feature_dim
        {
            return Err(IdeaError::invalid(format!(
                "asset dims (prompt {}x{}, coords {}) do not match library ({}x{})",
                asset.prompt.num_tokens(),
                asset.prompt.feature_dim(),
                asset.coords.dim(),
                self.prompt_len,
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Append under capacity; at capacity, merge into the nearest stored
    /// asset (2-Wasserstein on coordinates, ties to the lowest index) by
    /// averaging prompt, coordinates, and uncertainty.
    pub fn insert_or_merge(&mut self, new_asset: Asset<T>) -> Result<()> {
        self.check_asset(&new_asset)?;
        if self.assets.len() < self.capacity {
            self.assets.push(new_asset);
            return Ok(());
        }
        let mut best = 0usize;
        let mut best_d = T::infinity();
        for (k, asset) in self.assets.iter().enumerate() {
            let d = w2_distance(asset.coords(), new_asset.coords())?;
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        let merged = average_assets(&self.assets[best], &new_asset)?;
        self.assets[best] = merged;
        Ok(())
    }
}

fn average_assets<T: Real>(a: &Asset<T>, b: &Asset<T>) -> Result<Asset<T>> {
    let half = T::real(0.5);
    let l = a.prompt.num_tokens();
    let c = a.prompt.feature_dim();
    let mut tokens = Matrix::zeros(l, c);
    for i in 0..l {
        let (ra, rb) = (a.prompt.tokens().row(i), b.prompt.tokens().row(i));
        let row = tokens.row_mut(i);
        for j in 0..c {
            row[j] = half * (ra[j] + rb[j]);
        }
    }
    let mean: Vec<T> = a
        .coords
        .mean()
        .iter()
        .zip(b.coords.mean())
        .map(|(x, y)| half * (*x + *y))
        .collect();
    let std: Vec<T> = a
        .coords
        .std()
        .iter()
        .zip(b.coords.std())
        .map(|(x, y)| half * (*x + *y))
        .collect();
    Asset::new(
        SoftPrompt::new(tokens)?,
        FeatureStats::new(mean, std)?,
        half * (a.uncertainty + b.uncertainty),
    )
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

fn fmt_real<T: Real>(v: T) -> String {
    // 17 significant digits: enough to reproduce any f64 bit pattern.
    format!("{:.16e}", v.as_f64())
}

fn fmt_vec<T: Real>(out: &mut String, v: &[T]) {
    out.push('[');
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_real(*x));
    }
    out.push(']');
}

/// Render the library as an `idea-assets/1` document.
pub fn serialize<T: Real>(lib: &AssetLibrary<T>) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"format\": \"{FORMAT_VERSION}\",");
    let _ = writeln!(out, "  \"prompt_len\": {},", lib.prompt_len());
    let _ = writeln!(out, "  \"feature_dim\": {},", lib.feature_dim());
    let _ = writeln!(out, "  \"capacity\": {},", lib.capacity());
    out.push_str("  \"assets\": [");
    for (idx, asset) in lib.assets().iter().enumerate() {
        if idx > 0 {
            out.push(',');
        }
        out.push_str("\n    {\"prompt\": [");
        for i in 0..asset.prompt().num_tokens() {
            if i > 0 {
                out.push(',');
            }
            fmt_vec(&mut out, asset.prompt().tokens().row(i));
        }
        out.push_str("], \"mean\": ");
        fmt_vec(&mut out, asset.coords().mean());
        out.push_str(", \"std\": ");
        fmt_vec(&mut out, asset.coords().std());
        let _ = write!(out, ", \"uncertainty\": {}}}", fmt_real(asset.uncertainty()));
    }
    if !lib.assets().is_empty() {
        out.push_str("\n  ");
    }
    out.push_str("]\n}\n");
    out
}

fn json_usize(value: &serde_json::Value, key: &str) -> Result<usize> {
    value
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| IdeaError::Parse(format!("missing or non-integer field '{key}'")))
}

fn json_real<T: Real>(value: &serde_json::Value, context: &str) -> Result<T> {
    let raw = value
        .as_f64()
        .ok_or_else(|| IdeaError::Parse(format!("non-numeric value in {context}")))?;
    let v = T::real(raw);
    if !v.is_finite() {
        return Err(IdeaError::CorruptLibrary(format!(
            "non-finite value in {context}"
        )));
    }
    Ok(v)
}

fn json_real_vec<T: Real>(value: &serde_json::Value, context: &str) -> Result<Vec<T>> {
    value
        .as_array()
        .ok_or_else(|| IdeaError::Parse(format!("{context} is not an array")))?
        .iter()
        .map(|v| json_real(v, context))
        .collect()
}

/// Parse an `idea-assets/1` document.
pub fn deserialize<T: Real>(text: &str) -> Result<AssetLibrary<T>> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IdeaError::Parse(e.to_string()))?;
    let version = doc
        .get("format")
        .and_then(|v| v.as_str())
        .ok_or_else(|| IdeaError::Parse("missing 'format' field".to_string()))?;
    if version != FORMAT_VERSION {
        return Err(IdeaError::UnsupportedVersion(version.to_string()));
    }
    let prompt_len = json_usize(&doc, "prompt_len")?;
    let feature_dim = json_usize(&doc, "feature_dim")?;
    let capacity = json_usize(&doc, "capacity")?;
    let mut lib = AssetLibrary::new(capacity, prompt_len, feature_dim)
        .map_err(|e| IdeaError::CorruptLibrary(e.to_string()))?;

    let assets = doc
        .get("assets")
        .and_then(|v| v.as_array())
        .ok_or_else(|| IdeaError::Parse("missing 'assets' array".to_string()))?;
    if assets.len() > capacity {
        return Err(IdeaError::CorruptLibrary(format!(
            "{} assets exceed capacity {capacity}",
            assets.len()
        )));
    }
    for (idx, entry) in assets.iter().enumerate() {
        let prompt_rows = entry
            .get("prompt")
            .and_then(|v| v.as_array())
            .ok_or_else(|| IdeaError::Parse(format!("asset {idx}: missing prompt")))?;
        if prompt_rows.len() != prompt_len {
            return Err(IdeaError::CorruptLibrary(format!(
                "asset {idx}: prompt has {} rows, header says {prompt_len}",
                prompt_rows.len()
            )));
        }
        let mut rows: Vec<Vec<T>> = Vec::with_capacity(prompt_len);
        for row in prompt_rows {
            let row = json_real_vec(row, &format!("asset {idx} prompt row"))?;
            if row.len() != feature_dim {
                return Err(IdeaError::CorruptLibrary(format!(
                    "asset {idx}: prompt row has {} entries, header says {feature_dim}",
                    row.len()
                )));
            }
            rows.push(row);
        }
        let mean: Vec<T> = json_real_vec(
            entry
                .get("mean")
                .ok_or_else(|| IdeaError::Parse(format!("asset {idx}: missing mean")))?,
            &format!("asset {idx} mean"),
        )?;
        let std: Vec<T> = json_real_vec(
            entry
                .get("std")
                .ok_or_else(|| IdeaError::Parse(format!("asset {idx}: missing std")))?,
            &format!("asset {idx} std"),
        )?;
        if mean.len() != feature_dim || std.len() != feature_dim {
            return Err(IdeaError::CorruptLibrary(format!(
                "asset {idx}: coords dim {} / {} do not match header {feature_dim}",
                mean.len(),
                std.len()
            )));
        }
        let uncertainty = json_real(
            entry
                .get("uncertainty")
                .ok_or_else(|| IdeaError::Parse(format!("asset {idx}: missing uncertainty")))?,
            &format!("asset {idx} uncertainty"),
        )?;
        let prompt = SoftPrompt::new(Matrix::from_rows(rows)?)
            .map_err(|e| IdeaError::CorruptLibrary(e.to_string()))?;
        let coords = FeatureStats::new(mean, std)
            .map_err(|e| IdeaError::CorruptLibrary(e.to_string()))?;
        let asset = Asset::new(prompt, coords, uncertainty)
            .map_err(|e| IdeaError::CorruptLibrary(e.to_string()))?;
        lib.insert_or_merge(asset)
            .map_err(|e| IdeaError::CorruptLibrary(e.to_string()))?;
    }
    Ok(lib)
}
