//! Host-side values: program inputs, model weights and program outputs.

use serde::{Deserialize, Serialize};

use crate::ir::{Ctor, Type};

/// Dense row-major f32 tensor owned by the caller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HostTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl HostTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> HostTensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        HostTensor { shape, data }
    }

    pub fn filled(shape: &[usize], v: f32) -> HostTensor {
        HostTensor::new(shape.to_vec(), vec![v; shape.iter().product()])
    }
}

/// Bitwise equality: two tensors are equal iff shapes match and every
/// element has the same bit pattern.
impl PartialEq for HostTensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for HostTensor {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Datum {
    Tensor(HostTensor),
    Int(i64),
    Float(F32Bits),
    Adt(Ctor, Vec<Datum>),
    Tuple(Vec<Datum>),
}

/// f32 compared by bit pattern.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct F32Bits(pub f32);

impl PartialEq for F32Bits {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for F32Bits {}

impl Datum {
    pub fn float(v: f32) -> Datum {
        Datum::Float(F32Bits(v))
    }

    pub fn list(items: Vec<Datum>) -> Datum {
        items
            .into_iter()
            .rev()
            .fold(Datum::Adt(Ctor::Nil, vec![]), |tail, h| Datum::Adt(Ctor::Cons, vec![h, tail]))
    }

    pub fn leaf(x: Datum) -> Datum {
        Datum::Adt(Ctor::Leaf, vec![x])
    }

    pub fn node(l: Datum, r: Datum) -> Datum {
        Datum::Adt(Ctor::Node, vec![l, r])
    }

    /// Elements of a list value, or `None` if this is not a list.
    pub fn as_list(&self) -> Option<Vec<&Datum>> {
        let mut out = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Datum::Adt(Ctor::Nil, _) => return Some(out),
                Datum::Adt(Ctor::Cons, f) => {
                    out.push(&f[0]);
                    cur = &f[1];
                }
                _ => return None,
            }
        }
    }

    pub fn as_tensor(&self) -> Option<&HostTensor> {
        match self {
            Datum::Tensor(t) => Some(t),
            _ => None,
        }
    }

    /// Number of `Leaf` and `Node` constructors in a tree value.
    pub fn tree_size(&self) -> usize {
        match self {
            Datum::Adt(Ctor::Leaf, _) => 1,
            Datum::Adt(Ctor::Node, f) => 1 + f[0].tree_size() + f[1].tree_size(),
            _ => 0,
        }
    }

    /// True when the value inhabits `ty`.
    pub fn conforms(&self, ty: &Type) -> bool {
        match (self, ty) {
            (Datum::Tensor(t), Type::Tensor(s)) => &t.shape == s,
            (Datum::Int(_), Type::Scalar(crate::ir::ScalarKind::Int)) => true,
            (Datum::Float(_), Type::Scalar(crate::ir::ScalarKind::Float)) => true,
            (Datum::Tuple(xs), Type::Tuple(ts)) => {
                xs.len() == ts.len() && xs.iter().zip(ts).all(|(x, t)| x.conforms(t))
            }
            (Datum::Adt(Ctor::Nil, _), Type::List(_)) => true,
            (Datum::Adt(Ctor::Cons, f), Type::List(e)) => f[0].conforms(e) && f[1].conforms(ty),
            (Datum::Adt(Ctor::Leaf, f), Type::Tree(e)) => f[0].conforms(e),
            (Datum::Adt(Ctor::Node, f), Type::Tree(_)) => f[0].conforms(ty) && f[1].conforms(ty),
            _ => false,
        }
    }
}
