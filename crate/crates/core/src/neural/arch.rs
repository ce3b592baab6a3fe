//! Architecture presets and the named parameter store.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::neural::tensor::{Real, Tensor};
use crate::rng::seeded;

pub const CELL: usize = 8;
pub const DETECTOR_OUT: usize = CELL * CELL + 1;
pub const DUSTBIN: usize = CELL * CELL;
pub const ENCODER_LAYERS: usize = 8;
/// Encoder layers followed by a 2x2 max pool.
pub const POOL_AFTER: [usize; 3] = [1, 3, 5];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub encoder_widths: [usize; ENCODER_LAYERS],
    pub head_width: usize,
    pub descriptor_dim: usize,
}

impl ArchConfig {
    pub fn micro() -> Self {
        Self { encoder_widths: [9, 9, 16, 16, 32, 32, 32, 32], head_width: 32, descriptor_dim: 32 }
    }

    pub fn full() -> Self {
        Self { encoder_widths: [64, 64, 64, 64, 128, 128, 128, 128], head_width: 256, descriptor_dim: 256 }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "micro" => Ok(Self::micro()),
            "full" => Ok(Self::full()),
            _ => Err(Error::InvalidConfig(format!("unknown arch preset `{name}` (micro|full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.contains(&0) || self.head_width == 0 || self.descriptor_dim == 0 {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Recovers the architecture from parameter shapes.
    pub fn infer<T: Real>(store: &ParamStore<T>) -> Result<Self> {
        let out_width = |name: &str| -> Result<usize> {
            store.get(name).map(|t| t.dims[0])
        };
        let mut encoder_widths = [0; ENCODER_LAYERS];
        for (i, w) in encoder_widths.iter_mut().enumerate() {
            *w = out_width(&format!("enc.{i}.conv.w"))?;
        }
        let head_width = out_width("det.head.conv.w")?;
        // Without a descriptor head the presets pair the descriptor size with the head width.
        let descriptor_dim = if store.contains("desc.out.conv.w") { out_width("desc.out.conv.w")? } else { head_width };
        Ok(Self { encoder_widths, head_width, descriptor_dim })
    }
}

/// Ordered map of named tensors plus Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Real = f32> {
    pub params: IndexMap<String, Tensor<T>>,
    pub adam_m: IndexMap<String, Tensor<T>>,
    pub adam_v: IndexMap<String, Tensor<T>>,
    /// Name prefixes excluded from optimization.
    pub frozen: Vec<String>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { params: IndexMap::new(), adam_m: IndexMap::new(), adam_v: IndexMap::new(), frozen: Vec::new() }
    }
}

pub fn is_running_stat(name: &str) -> bool {
    name.ends_with(".bn.mean") || name.ends_with(".bn.var")
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) {
        self.params.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).ok_or_else(|| Error::ShapeMismatch(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::ShapeMismatch(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn has_descriptor(&self) -> bool {
        self.contains("desc.out.conv.w")
    }

    pub fn freeze(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Names updated by the optimizer: everything except running statistics and frozen entries.
    pub fn trainable_names(&self) -> Vec<String> {
        self.params.keys().filter(|n| !is_running_stat(n) && !self.is_frozen(n)).cloned().collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|(n, _)| !is_running_stat(n)).map(|(_, t)| t.len()).sum()
    }

    pub fn convert<U: Real>(&self) -> ParamStore<U> {
        let conv = |m: &IndexMap<String, Tensor<T>>| m.iter().map(|(k, v)| (k.clone(), v.convert())).collect();
        ParamStore { params: conv(&self.params), adam_m: conv(&self.adam_m), adam_v: conv(&self.adam_v), frozen: self.frozen.clone() }
    }

    /// Parameters only, with optimizer state dropped.
    pub fn weights_only(&self) -> Self {
        Self { params: self.params.clone(), ..Self::default() }
    }

    /// Copies every parameter present in `other` with a matching shape.
    pub fn load_matching(&mut self, other: &ParamStore<T>) {
        for (name, t) in &other.params {
            if let Some(dst) = self.params.get_mut(name) {
                if dst.dims == t.dims {
                    *dst = t.clone();
                }
            }
        }
    }
}

fn add_conv<T: Real, R: Rng>(store: &mut ParamStore<T>, prefix: &str, cin: usize, cout: usize, k: usize, rng: &mut R) {
    let fan_in = (cin * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let w = (0..cout * cin * k * k).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    store.insert(&format!("{prefix}.conv.w"), Tensor { dims: vec![cout, cin, k, k], data: w });
    store.insert(&format!("{prefix}.conv.b"), Tensor::zeros(&[cout]));
}

fn add_bn<T: Real>(store: &mut ParamStore<T>, prefix: &str, c: usize) {
    store.insert(&format!("{prefix}.bn.gamma"), Tensor::filled(&[c], T::ONE));
    store.insert(&format!("{prefix}.bn.beta"), Tensor::zeros(&[c]));
    store.insert(&format!("{prefix}.bn.mean"), Tensor::zeros(&[c]));
    store.insert(&format!("{prefix}.bn.var"), Tensor::filled(&[c], T::ONE));
}

/// Kaiming-uniform (fan-in) conv weights, zero biases, unit/zero batch-norm affine terms.
pub fn init_params<T: Real>(arch: &ArchConfig, with_descriptor: bool, seed: u64) -> Result<ParamStore<T>> {
    arch.validate()?;
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    let mut cin = 1;
    for (i, &w) in arch.encoder_widths.iter().enumerate() {
        let p = format!("enc.{i}");
        add_conv(&mut store, &p, cin, w, 3, &mut rng);
        add_bn(&mut store, &p, w);
        cin = w;
    }
    add_conv(&mut store, "det.head", cin, arch.head_width, 3, &mut rng);
    add_bn(&mut store, "det.head", arch.head_width);
    add_conv(&mut store, "det.out", arch.head_width, DETECTOR_OUT, 1, &mut rng);
    if with_descriptor {
        add_descriptor_head(&mut store, arch, seed)?;
    }
    Ok(store)
}

/// Adds a freshly initialized descriptor head (used when promoting a detector-only model).
pub fn add_descriptor_head<T: Real>(store: &mut ParamStore<T>, arch: &ArchConfig, seed: u64) -> Result<()> {
    let mut rng = seeded(seed ^ 0x5eed_de5c);
    let cin = arch.encoder_widths[ENCODER_LAYERS - 1];
    add_conv(store, "desc.head", cin, arch.head_width, 3, &mut rng);
    add_bn(store, "desc.head", arch.head_width);
    add_conv(store, "desc.out", arch.head_width, arch.descriptor_dim, 1, &mut rng);
    Ok(())
}
