//! Parameter layout. All tensors live in one flat vector so the optimizer
//! and checkpoint code can treat them uniformly; matrices are row-major
//! `[out][in]`.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INPUT_DIM: usize = 4;
pub const PROJ_DIM: usize = 12;
pub const HEAD_DIM: usize = 6;
pub const HEADS: usize = 4;
pub const LAYERS: usize = 2;
pub const TYPES: usize = 2;
pub const COMMANDS: usize = 6;
pub const MLP_IN: usize = HEAD_DIM + COMMANDS;
pub const MLP_HIDDEN: usize = 32;
pub const CLASSES: usize = 2;

/// Input width of attention layer `l`.
pub const fn layer_input(l: usize) -> usize {
    if l == 0 {
        PROJ_DIM
    } else {
        HEADS * HEAD_DIM
    }
}

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeadOffsets {
    /// `HEAD_DIM × d_in` feature map.
    pub w: usize,
    /// `HEAD_DIM` edge-attribute map.
    pub w_e: usize,
    /// `3·HEAD_DIM` attention vector over `[Wh_i ‖ Wh_j ‖ W_e e]`.
    pub a: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub w_v: usize,
    /// Indexed `[layer][edge type][head]`.
    pub heads: [[[HeadOffsets; HEADS]; TYPES]; LAYERS],
    pub w_b: usize,
    pub b: usize,
    pub q: usize,
    pub mlp_w: [usize; 3],
    pub mlp_b: [usize; 3],
}

const TYPE_NAMES: [&str; TYPES] = ["spatial", "temporal"];

fn build_layout() -> Layout {
    let mut tensors = Vec::new();
    let mut total = 0;
    let mut add = |name: String, shape: Vec<usize>, fan_in: usize| {
        let offset = total;
        total += shape.iter().product::<usize>();
        tensors.push(TensorSpec {
            name,
            shape,
            offset,
            fan_in,
        });
        offset
    };
    let w_v = add("w_v".into(), vec![PROJ_DIM, INPUT_DIM], INPUT_DIM);
    let mut heads = [[[HeadOffsets::default(); HEADS]; TYPES]; LAYERS];
    for (l, layer) in heads.iter_mut().enumerate() {
        let d = layer_input(l);
        for (t, ty) in layer.iter_mut().enumerate() {
            for (k, h) in ty.iter_mut().enumerate() {
                let p = format!("layer{}.{}.head{}", l + 1, TYPE_NAMES[t], k);
                h.w = add(format!("{p}.w"), vec![HEAD_DIM, d], d);
                h.w_e = add(format!("{p}.w_e"), vec![HEAD_DIM, 1], 1);
                h.a = add(format!("{p}.a"), vec![3 * HEAD_DIM], 3 * HEAD_DIM);
            }
        }
    }
    let w_b = add("importance.w_b".into(), vec![HEAD_DIM, HEAD_DIM], HEAD_DIM);
    let b = add("importance.b".into(), vec![HEAD_DIM], HEAD_DIM);
    let q = add("importance.q".into(), vec![HEAD_DIM], HEAD_DIM);
    let dims = [(MLP_IN, MLP_HIDDEN), (MLP_HIDDEN, MLP_HIDDEN), (MLP_HIDDEN, CLASSES)];
    let mut mlp_w = [0; 3];
    let mut mlp_b = [0; 3];
    for (i, &(din, dout)) in dims.iter().enumerate() {
        mlp_w[i] = add(format!("mlp{}.w", i + 1), vec![dout, din], din);
        mlp_b[i] = add(format!("mlp{}.b", i + 1), vec![dout], din);
    }
    Layout {
        tensors,
        total,
        w_v,
        heads,
        w_b,
        b,
        q,
        mlp_w,
        mlp_b,
    }
}

pub fn layout() -> &'static Layout {
    static LAYOUT: OnceLock<Layout> = OnceLock::new();
    LAYOUT.get_or_init(build_layout)
}

/// All learnable tensors, flattened in [`layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        ModelParams {
            data: vec![0.0; layout().total],
        }
    }

    /// Uniform(−s, s) with s = 1/√fan_in per tensor, drawn in layout order.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        for t in &layout().tensors {
            let s = 1.0 / (t.fan_in as f64).sqrt();
            for v in &mut p.data[t.range()] {
                *v = rng.gen_range(-s..s);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        layout()
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = layout().tensors.iter().find(|t| t.name == name)?.range();
        Some(&mut self.data[r])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_shapes_match() {
        let l = layout();
        let mut expect = 0;
        for t in &l.tensors {
            assert_eq!(t.offset, expect);
            expect += t.len();
        }
        assert_eq!(expect, l.total);
        let p = ModelParams::init(1);
        assert_eq!(p.tensor("w_v").unwrap().len(), 48);
        assert_eq!(p.tensor("layer1.spatial.head0.w").unwrap().len(), 72);
        assert_eq!(p.tensor("layer2.temporal.head3.w").unwrap().len(), 144);
        assert_eq!(p.tensor("importance.w_b").unwrap().len(), 36);
        assert_eq!(p.tensor("mlp3.w").unwrap().len(), 64);
        assert_eq!(l.total, 48 + 2 * 4 * 96 + 2 * 4 * 168 + 48 + 416 + 1056 + 66);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(5);
        assert_eq!(a, ModelParams::init(5));
        assert_ne!(a, ModelParams::init(6));
        for t in &layout().tensors {
            let s = 1.0 / (t.fan_in as f64).sqrt();
            assert!(a.data[t.range()].iter().all(|v| v.abs() < s));
        }
    }
}
