//! Parameter trees.
//!
//! Every parameter struct is generic over its leaf type: `Tensor<f32>` when
//! stored, [`Var`] once bound into a [`Graph`]. `visit` and `map_params`
//! walk leaves in the same fixed order, which is what lets gradients, SGD
//! updates and the model file line up by position.

use crate::error::Result;
use crate::tensor::{Graph, Rng, Scalar, Tensor, Var};

pub trait ParamTree {
    type Elem;
    type With<Q>: ParamTree<Elem = Q>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Self::Elem));

    fn map_params<Q>(&self, f: &mut dyn FnMut(&Self::Elem) -> Q) -> Self::With<Q>;
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// All leaves with their dotted names, in canonical order.
pub fn named<M: ParamTree>(tree: &M) -> Vec<(String, &M::Elem)> {
    let mut out = Vec::new();
    tree.visit("", &mut |name, p| out.push((name, p)));
    out
}

/// Binds stored parameters as trainable leaves of `g`.
pub fn bind<T: Scalar, M: ParamTree<Elem = Tensor>>(g: &mut Graph<T>, tree: &M) -> M::With<Var> {
    tree.map_params(&mut |t| g.param(t.cast()))
}

/// Binds stored parameters as constants (inference only).
pub fn bind_frozen<T: Scalar, M: ParamTree<Elem = Tensor>>(g: &mut Graph<T>, tree: &M) -> M::With<Var> {
    tree.map_params(&mut |t| g.constant(t.cast()))
}

/// Rebuilds a bound tree from vars given in canonical leaf order.
pub fn rebind<M: ParamTree>(template: &M, vars: &[Var]) -> M::With<Var> {
    let mut it = vars.iter().copied();
    let out = template.map_params(&mut |_| it.next().expect("one var per leaf"));
    assert!(it.next().is_none(), "more vars than leaves");
    out
}

pub fn count<M: ParamTree<Elem = Tensor>>(tree: &M) -> usize {
    named(tree).iter().map(|(_, t)| t.len()).sum()
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(-a, a) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

macro_rules! leaf {
    ($self:ident, $prefix:ident, $f:ident, $($field:ident),*) => {
        $( $f(join($prefix, stringify!($field)), &$self.$field); )*
    };
}

/// Affine map `x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<P = Tensor> {
    pub weight: P,
    pub bias: P,
}

impl Linear {
    pub fn init(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: xavier_uniform(rng, &[fan_in, fan_out], fan_in, fan_out),
            bias: Tensor::zeros([fan_out]),
        }
    }
}

impl Linear<Var> {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_row_bias(y, self.bias)
    }
}

impl<P> ParamTree for Linear<P> {
    type Elem = P;
    type With<Q> = Linear<Q>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        leaf!(self, prefix, f, weight, bias);
    }

    fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Linear<Q> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<P = Tensor> {
    pub gain: P,
    pub bias: P,
}

impl LayerNormParams {
    pub fn init(d: usize) -> Self {
        LayerNormParams {
            gain: Tensor::ones([d]),
            bias: Tensor::zeros([d]),
        }
    }
}

impl LayerNormParams<Var> {
    pub fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        g.layer_norm(x, self.gain, self.bias)
    }
}

impl<P> ParamTree for LayerNormParams<P> {
    type Elem = P;
    type With<Q> = LayerNormParams<Q>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        leaf!(self, prefix, f, gain, bias);
    }

    fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> LayerNormParams<Q> {
        LayerNormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

impl<M: ParamTree> ParamTree for Vec<M> {
    type Elem = M::Elem;
    type With<Q> = Vec<M::With<Q>>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Self::Elem)) {
        for (i, m) in self.iter().enumerate() {
            m.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn map_params<Q>(&self, f: &mut dyn FnMut(&Self::Elem) -> Q) -> Self::With<Q> {
        self.iter().map(|m| m.map_params(f)).collect()
    }
}

/// Implements [`ParamTree`] for a struct whose fields are all subtrees.
macro_rules! param_tree {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<P> $crate::params::ParamTree for $ty<P> {
            type Elem = P;
            type With<Q> = $ty<Q>;

            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
                $(
                    let name = if prefix.is_empty() {
                        stringify!($field).to_string()
                    } else {
                        format!("{prefix}.{}", stringify!($field))
                    };
                    $crate::params::ParamTree::visit(&self.$field, &name, f);
                )*
            }

            fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> $ty<Q> {
                $ty {
                    $( $field: $crate::params::ParamTree::map_params(&self.$field, f), )*
                }
            }
        }
    };
}
pub(crate) use param_tree;

/// A bare leaf wrapper so single tensors can sit inside [`param_tree!`] structs.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf<P = Tensor>(pub P);

impl<P> ParamTree for Leaf<P> {
    type Elem = P;
    type With<Q> = Leaf<Q>;

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(prefix.to_string(), &self.0);
    }

    fn map_params<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Leaf<Q> {
        Leaf(f(&self.0))
    }
}
