//! Model zoo: program sources at two hidden sizes plus seeded weight and
//! input generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Datum, HostTensor};
use crate::ir::{parse_program, Program, ScalarKind, Type};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Rnn,
    Birnn,
    Treelstm,
    Mvrnn,
    Nestedrnn,
    Drnn,
    Stackrnn,
    /// Conditional with unequal branches; not part of the benchmark set.
    Branchy,
}

impl Model {
    /// The seven benchmark models.
    pub const ZOO: [Model; 7] = [
        Model::Rnn,
        Model::Birnn,
        Model::Treelstm,
        Model::Mvrnn,
        Model::Nestedrnn,
        Model::Drnn,
        Model::Stackrnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Model::Rnn => "rnn",
            Model::Birnn => "birnn",
            Model::Treelstm => "treelstm",
            Model::Mvrnn => "mvrnn",
            Model::Nestedrnn => "nestedrnn",
            Model::Drnn => "drnn",
            Model::Stackrnn => "stackrnn",
            Model::Branchy => "branchy",
        }
    }

    fn template(self) -> &'static str {
        match self {
            Model::Rnn => include_str!("../../models/rnn.mbir"),
            Model::Birnn => include_str!("../../models/birnn.mbir"),
            Model::Treelstm => include_str!("../../models/treelstm.mbir"),
            Model::Mvrnn => include_str!("../../models/mvrnn.mbir"),
            Model::Nestedrnn => include_str!("../../models/nestedrnn.mbir"),
            Model::Drnn => include_str!("../../models/drnn.mbir"),
            Model::Stackrnn => include_str!("../../models/stackrnn.mbir"),
            Model::Branchy => include_str!("../../models/branchy.mbir"),
        }
    }

    /// Model source with the hidden size filled in.
    pub fn source(self, size: Size) -> String {
        let h = size.hidden();
        self.template()
            .replace("{H2}", &(2 * h).to_string())
            .replace("{H}", &h.to_string())
    }

    pub fn program(self, size: Size) -> Program {
        parse_program(&self.source(size)).expect("zoo models parse")
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Model, String> {
        Model::ZOO
            .into_iter()
            .chain([Model::Branchy])
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown model '{s}'"))
    }
}

/// The RNN with explicit phase markers at hidden size 256.
pub const PHASED_RNN: &str = include_str!("../../models/phased_rnn.mbir");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    #[default]
    Small,
    Large,
}

impl Size {
    pub fn hidden(self) -> usize {
        match self {
            Size::Small => 32,
            Size::Large => 64,
        }
    }
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Size, String> {
        match s {
            "small" => Ok(Size::Small),
            "large" => Ok(Size::Large),
            _ => Err(format!("unknown size '{s}'")),
        }
    }
}

/// Overrides for the structure of generated inputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct InputShape {
    /// Exact length of every generated list.
    pub list_len: Option<usize>,
    /// Exact node count of every generated tree (rounded up to odd).
    pub tree_nodes: Option<usize>,
}

pub const LIST_LEN: (usize, usize) = (4, 12);
pub const TREE_NODES: (usize, usize) = (7, 31);
pub const INNER_STEPS: (usize, usize) = (20, 40);
pub const DRNN_BUDGET: (i64, i64) = (2, 4);

/// Weights for every weight parameter of `program`, in declaration order.
pub fn weights(program: &Program, seed: u64) -> Vec<(String, HostTensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ea7);
    program
        .weights()
        .map(|p| {
            let Some(Type::Tensor(shape)) = &p.ty else {
                panic!("weight `{}` needs a tensor type", p.name)
            };
            let scale = if shape[0] > 1 {
                1.0 / (shape[0] as f32).sqrt()
            } else {
                0.1
            };
            (p.name.clone(), random_tensor(&mut rng, shape, scale))
        })
        .collect()
}

/// One value per input parameter of `program`, for each of `batch` instances.
pub fn inputs(model: Model, program: &Program, batch: usize, seed: u64, shape: InputShape) -> Vec<Vec<Datum>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|_| {
            program
                .inputs()
                .map(|p| {
                    let ty = p.ty.as_ref().expect("inputs are typed");
                    gen_value(model, ty, &mut rng, shape)
                })
                .collect()
        })
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> HostTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    HostTensor::new(shape.to_vec(), data)
}

fn gen_value(model: Model, ty: &Type, rng: &mut ChaCha8Rng, shape: InputShape) -> Datum {
    match ty {
        Type::Tensor(s) if s == &[1, 1] => {
            let steps = rng.gen_range(INNER_STEPS.0..=INNER_STEPS.1);
            Datum::Tensor(HostTensor::new(vec![1, 1], vec![steps as f32]))
        }
        Type::Tensor(s) => {
            let scale = if s[0] > 1 { 1.0 / (s[0] as f32).sqrt() } else { 1.0 };
            Datum::Tensor(random_tensor(rng, s, scale))
        }
        Type::Scalar(ScalarKind::Int) => Datum::Int(match model {
            Model::Drnn => rng.gen_range(DRNN_BUDGET.0..=DRNN_BUDGET.1),
            _ => rng.gen_range(0..=1),
        }),
        Type::Scalar(ScalarKind::Float) => Datum::float(rng.gen_range(-1.0..1.0)),
        Type::Tuple(ts) => Datum::Tuple(ts.iter().map(|t| gen_value(model, t, rng, shape)).collect()),
        Type::List(e) => {
            let len = shape
                .list_len
                .unwrap_or_else(|| rng.gen_range(LIST_LEN.0..=LIST_LEN.1));
            Datum::list((0..len).map(|_| gen_value(model, e, rng, shape)).collect())
        }
        Type::Tree(e) => {
            let n = shape
                .tree_nodes
                .unwrap_or_else(|| rng.gen_range(TREE_NODES.0..=TREE_NODES.1));
            let n = n | 1;
            gen_tree(model, e, n, rng, shape)
        }
    }
}

/// Full binary tree with `n` (odd) nodes and a random shape.
fn gen_tree(model: Model, elem: &Type, n: usize, rng: &mut ChaCha8Rng, shape: InputShape) -> Datum {
    if n == 1 {
        return Datum::leaf(gen_value(model, elem, rng, shape));
    }
    // left subtree gets an odd share of the n - 1 remaining nodes
    let pairs = (n - 1) / 2;
    let left = 2 * rng.gen_range(0..pairs) + 1;
    let l = gen_tree(model, elem, left, rng, shape);
    let r = gen_tree(model, elem, n - 1 - left, rng, shape);
    Datum::node(l, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_model_parses_at_both_sizes() {
        for m in Model::ZOO.into_iter().chain([Model::Branchy]) {
            for s in [Size::Small, Size::Large] {
                let p = m.program(s);
                assert_eq!(p.entry, "main", "{m}");
            }
        }
    }

    #[test]
    fn every_model_type_checks() {
        for m in Model::ZOO.into_iter().chain([Model::Branchy]) {
            let t = crate::ir::infer_types(&m.program(Size::Small)).unwrap_or_else(|e| panic!("{m}: {e}"));
            crate::ir::validate_annotations(&t).unwrap_or_else(|e| panic!("{m}: {e}"));
        }
        let phased = parse_program(PHASED_RNN).unwrap();
        let t = crate::ir::infer_types(&phased).unwrap();
        assert_eq!(t.entry_ret().to_string(), "List[Tensor[(1, 16)]]");
    }

    #[test]
    fn generated_inputs_conform() {
        for m in Model::ZOO {
            let p = m.program(Size::Small);
            for inst in inputs(m, &p, 3, 7, InputShape::default()) {
                for (v, decl) in inst.iter().zip(p.inputs()) {
                    assert!(v.conforms(decl.ty.as_ref().unwrap()), "{m}: {}", decl.name);
                }
            }
        }
    }

    #[test]
    fn trees_have_requested_size() {
        let p = Model::Treelstm.program(Size::Small);
        let shape = InputShape {
            tree_nodes: Some(15),
            ..Default::default()
        };
        for inst in inputs(Model::Treelstm, &p, 5, 1, shape) {
            assert_eq!(inst[0].tree_size(), 15);
        }
    }
}
