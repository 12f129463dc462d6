use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays in creation order. Shapes are fixed once added.
#[derive(Debug, Clone)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, usize>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParameterStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values && self.seed == other.seed
    }
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Contract(format!("invalid parameter name `{name}`")));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Adds a parameter drawn from `N(0, std²)` using the store's own stream.
    pub fn gaussian(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> Result<ParamId> {
        let rng = &mut self.rng;
        let value = Array2::from_shape_simple_fn((rows, cols), || std * rng.sample::<f64, _>(StandardNormal));
        self.add(name, value)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Array2<f64>) -> Result<()> {
        if value.dim() != self.values[id.0].dim() {
            return Err(Error::Contract(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].dim(),
                value.dim()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    fn weights_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.num_scalars() * 8);
        for v in &self.values {
            for x in v.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        bytes
    }

    /// Writes `manifest.txt` (names, shapes, metadata, checksum) and
    /// `weights.bin` (little-endian f64, manifest order) into `dir`.
    pub fn save(&self, dir: &Path, meta: &[(String, String)]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let bytes = self.weights_bytes();
        let mut manifest = format!("checkpoint 1\nseed {}\n", self.seed);
        for (k, v) in meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Contract(format!("invalid checkpoint metadata `{k}`")));
            }
            let _ = writeln!(manifest, "meta {k} {v}");
        }
        for (name, v) in self.names.iter().zip(&self.values) {
            let _ = writeln!(manifest, "param {name} {} {}", v.nrows(), v.ncols());
        }
        let _ = writeln!(manifest, "checksum sha256 {}", hex::encode(Sha256::digest(&bytes)));
        std::fs::write(dir.join("weights.bin"), &bytes)?;
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    /// Inverse of [`ParameterStore::save`]; verifies sizes and checksum.
    pub fn load(dir: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let bytes = std::fs::read(dir.join("weights.bin"))?;
        let mut lines = manifest.lines();
        if lines.next() != Some("checkpoint 1") {
            return Err(Error::Parse("not a checkpoint manifest".into()));
        }
        let mut seed = 0;
        let mut meta = Vec::new();
        let mut shapes = Vec::new();
        let mut checksum = None;
        for line in lines {
            let mut parts = line.splitn(2, ' ');
            let (tag, rest) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
            let bad = || Error::Parse(format!("bad manifest line `{line}`"));
            match tag {
                "seed" => seed = rest.parse().map_err(|_| bad())?,
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.push((k.to_string(), v.to_string()));
                }
                "param" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    if f.len() != 3 {
                        return Err(bad());
                    }
                    let r: usize = f[1].parse().map_err(|_| bad())?;
                    let c: usize = f[2].parse().map_err(|_| bad())?;
                    shapes.push((f[0].to_string(), r, c));
                }
                "checksum" => checksum = rest.strip_prefix("sha256 ").map(str::to_string),
                "" => {}
                _ => return Err(bad()),
            }
        }
        let expected = checksum.ok_or_else(|| Error::Parse("checkpoint has no checksum".into()))?;
        if hex::encode(Sha256::digest(&bytes)) != expected {
            return Err(Error::Parse("checkpoint checksum mismatch".into()));
        }
        let total: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        if bytes.len() != total * 8 {
            return Err(Error::Parse(format!("weights hold {} bytes, manifest needs {}", bytes.len(), total * 8)));
        }
        let mut store = ParameterStore::new(seed);
        let mut floats = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        for (name, r, c) in shapes {
            let v = Array2::from_shape_vec((r, c), floats.by_ref().take(r * c).collect())
                .map_err(|e| Error::Parse(e.to_string()))?;
            store.add(&name, v)?;
        }
        Ok((store, meta))
    }

    /// Copies values from `other` by name, requiring identical layouts.
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Contract("checkpoint parameter layout differs from the model".into()));
        }
        for (i, v) in other.values.iter().enumerate() {
            self.set(ParamId(i), v.clone())?;
        }
        Ok(())
    }
}
