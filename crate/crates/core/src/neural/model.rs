//! Shared encoder with detector and descriptor heads: forward with caches, manual backward.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::imaging::ImageGray;
use crate::neural::arch::{ArchConfig, ParamStore, CELL, ENCODER_LAYERS, POOL_AFTER};
use crate::neural::layers::*;
use crate::neural::tensor::{Real, Tensor};

pub type Grads<T> = IndexMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub detector: bool,
    pub descriptor: bool,
}

impl Heads {
    pub const DETECTOR: Heads = Heads { detector: true, descriptor: false };
    pub const BOTH: Heads = Heads { detector: true, descriptor: true };
}

/// conv -> BN -> ReLU, optionally followed by 2x2 max pool.
struct BlockCache<T: Real> {
    prefix: String,
    input: Tensor<T>,
    bn: BnCache<T>,
    act: Tensor<T>,
    pool: Option<Vec<u32>>,
}

struct HeadCache<T: Real> {
    block: BlockCache<T>,
}

pub struct ForwardCache<T: Real> {
    blocks: Vec<BlockCache<T>>,
    features: Tensor<T>,
    det: Option<HeadCache<T>>,
    desc: Option<HeadCache<T>>,
}

pub struct Outputs<T: Real> {
    /// `N x 65 x Hc x Wc` cell logits.
    pub logits: Option<Tensor<T>>,
    /// `N x D x Hc x Wc`, not normalized.
    pub descriptors: Option<Tensor<T>>,
}

fn block_forward<T: Real>(
    store: &ParamStore<T>,
    prefix: &str,
    x: Tensor<T>,
    mode: BnMode,
    pool: bool,
) -> Result<(Tensor<T>, BlockCache<T>)> {
    let p = |s: &str| format!("{prefix}.{s}");
    let z = conv3x3(&x, store.get(&p("conv.w"))?, store.get(&p("conv.b"))?)?;
    let (zn, bn) = batchnorm(
        &z,
        store.get(&p("bn.gamma"))?,
        store.get(&p("bn.beta"))?,
        store.get(&p("bn.mean"))?,
        store.get(&p("bn.var"))?,
        mode,
    )?;
    drop(z);
    let act = relu(&zn);
    drop(zn);
    let (out, pool) = if pool {
        let (y, arg) = maxpool2x2(&act)?;
        (y, Some(arg))
    } else {
        (act.clone(), None)
    };
    Ok((out, BlockCache { prefix: prefix.to_string(), input: x, bn, act, pool }))
}

/// Returns the gradient with respect to the block input.
fn block_backward<T: Real>(
    store: &ParamStore<T>,
    cache: &BlockCache<T>,
    dy: Tensor<T>,
    grads: &mut Grads<T>,
    need_dx: bool,
) -> Result<Tensor<T>> {
    let p = |s: &str| format!("{}.{s}", cache.prefix);
    let dact = match &cache.pool {
        Some(arg) => maxpool2x2_backward(&cache.act.dims, arg, &dy),
        None => dy,
    };
    let dzn = relu_backward(&cache.act, &dact);
    let bn = batchnorm_backward(&cache.bn, store.get(&p("bn.gamma"))?, &dzn)?;
    let cg = conv3x3_backward(&cache.input, store.get(&p("conv.w"))?, &bn.dx, need_dx)?;
    grads.insert(p("bn.gamma"), bn.dgamma);
    grads.insert(p("bn.beta"), bn.dbeta);
    grads.insert(p("conv.w"), cg.dw);
    grads.insert(p("conv.b"), cg.db);
    Ok(cg.dx)
}

pub fn check_input_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % CELL != 0 || w % CELL != 0 {
        return Err(Error::DimensionNotDivisible(h, w));
    }
    Ok(())
}

/// Runs the encoder and the requested heads on an `N x 1 x H x W` batch.
pub fn forward<T: Real>(
    store: &ParamStore<T>,
    arch: &ArchConfig,
    x: &Tensor<T>,
    mode: BnMode,
    heads: Heads,
) -> Result<(Outputs<T>, ForwardCache<T>)> {
    let (_, c, h, w) = x.nchw()?;
    if c != 1 {
        return Err(Error::ShapeMismatch(format!("expected 1 input channel, got {c}")));
    }
    check_input_dims(h, w)?;
    let _ = arch;
    let mut blocks = Vec::with_capacity(ENCODER_LAYERS);
    let mut cur = x.clone();
    for i in 0..ENCODER_LAYERS {
        let (out, cache) = block_forward(store, &format!("enc.{i}"), cur, mode, POOL_AFTER.contains(&i))?;
        blocks.push(cache);
        cur = out;
    }
    let features = cur;
    let mut outputs = Outputs { logits: None, descriptors: None };
    let run_head = |name: &str| -> Result<(Tensor<T>, HeadCache<T>)> {
        let (hidden, block) = block_forward(store, &format!("{name}.head"), features.clone(), mode, false)?;
        let out = conv1x1(&hidden, store.get(&format!("{name}.out.conv.w"))?, store.get(&format!("{name}.out.conv.b"))?)?;
        Ok((out, HeadCache { block }))
    };
    let det = if heads.detector {
        let (logits, cache) = run_head("det")?;
        outputs.logits = Some(logits);
        Some(cache)
    } else {
        None
    };
    let desc = if heads.descriptor {
        let (d, cache) = run_head("desc")?;
        outputs.descriptors = Some(d);
        Some(cache)
    } else {
        None
    };
    Ok((outputs, ForwardCache { blocks, features, det, desc }))
}

/// Gradients of all parameters that influenced the outputs given upstream gradients.
pub fn backward<T: Real>(
    store: &ParamStore<T>,
    cache: &ForwardCache<T>,
    d_logits: Option<&Tensor<T>>,
    d_desc: Option<&Tensor<T>>,
) -> Result<Grads<T>> {
    let mut grads = Grads::new();
    let mut d_features = Tensor::zeros(&cache.features.dims);
    for (name, head, dout) in [("det", &cache.det, d_logits), ("desc", &cache.desc, d_desc)] {
        let (Some(head), Some(dout)) = (head, dout) else { continue };
        let hidden = &head.block.act;
        let cg = conv1x1_backward(hidden, store.get(&format!("{name}.out.conv.w"))?, dout)?;
        grads.insert(format!("{name}.out.conv.w"), cg.dw);
        grads.insert(format!("{name}.out.conv.b"), cg.db);
        let dx = block_backward(store, &head.block, cg.dx, &mut grads, true)?;
        d_features.add_assign(&dx);
    }
    let mut dy = d_features;
    for (i, block) in cache.blocks.iter().enumerate().rev() {
        dy = block_backward(store, block, dy, &mut grads, i > 0)?;
    }
    Ok(grads)
}

/// Folds the batch statistics of a train-mode pass into the running estimates.
pub fn update_running_stats<T: Real>(store: &mut ParamStore<T>, cache: &ForwardCache<T>) -> Result<()> {
    let heads = [&cache.det, &cache.desc];
    let all = cache.blocks.iter().chain(heads.iter().filter_map(|h| h.as_ref().map(|h| &h.block)));
    for block in all {
        if block.bn.mode != BnMode::Train {
            continue;
        }
        let mut mean = store.get(&format!("{}.bn.mean", block.prefix))?.clone();
        let mut var = store.get(&format!("{}.bn.var", block.prefix))?.clone();
        batchnorm_update_running(&block.bn, &mut mean, &mut var);
        *store.get_mut(&format!("{}.bn.mean", block.prefix))? = mean;
        *store.get_mut(&format!("{}.bn.var", block.prefix))? = var;
    }
    Ok(())
}

/// Stacks equally sized images into an `N x 1 x H x W` tensor.
pub fn images_to_tensor<T: Real>(images: &[&ImageGray]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::DimensionMismatch(format!("{}x{} vs {}x{}", img.width(), img.height(), w, h)));
        }
        data.extend(img.data().iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}
