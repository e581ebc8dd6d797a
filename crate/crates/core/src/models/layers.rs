use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Bound, NormKind, ParamStore, Real, Tape, Tensor, TensorError, Var};

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;

/// Normalisation epsilon.
pub const NORM_EPS: f64 = 1e-5;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Norm {
    Instance,
    Batch,
    None,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::Instance => "instance",
            Norm::Batch => "batch",
            Norm::None => "none",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "instance" => Some(Norm::Instance),
            "batch" => Some(Norm::Batch),
            "none" => Some(Norm::None),
            _ => None,
        }
    }

    pub(crate) fn apply<T: Real>(self, tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        let eps = T::from_f64(NORM_EPS);
        match self {
            Norm::Instance => tape.normalize(x, NormKind::Instance, eps),
            Norm::Batch => tape.normalize(x, NormKind::Batch, eps),
            Norm::None => Ok(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
}

/// Name, shape and initialisation of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Ordered parameter list of a network under construction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
}

impl Layout {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> ConvLayer {
        let weight = self.push(format!("{name}.weight"), vec![cout, cin, kernel, kernel], Init::Normal);
        let bias = self.push(format!("{name}.bias"), vec![cout], Init::Zeros);
        ConvLayer {
            weight,
            bias,
            stride,
            pad,
            transpose: false,
        }
    }

    pub(crate) fn conv_transpose(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> ConvLayer {
        let weight = self.push(format!("{name}.weight"), vec![cin, cout, kernel, kernel], Init::Normal);
        let bias = self.push(format!("{name}.bias"), vec![cout], Init::Zeros);
        ConvLayer {
            weight,
            bias,
            stride,
            pad,
            transpose: true,
        }
    }

    /// Draws every parameter from its initialiser, in layout order.
    pub fn init<T: Real, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut store = ParamStore::new();
        for spec in &self.specs {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Normal => (0..n).map(|_| T::from_f64(normal.sample(rng))).collect(),
                Init::Zeros => vec![T::zero(); n],
            };
            let t = Tensor::new(spec.shape.clone(), data).expect("spec shape");
            store.insert(spec.name.clone(), t).expect("unique layout names");
        }
        store
    }

    /// Checks that `store` holds exactly this layout's names and shapes.
    pub fn matches<T: Real>(&self, store: &ParamStore<T>) -> Result<(), String> {
        if store.len() != self.specs.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                self.specs.len(),
                store.len()
            ));
        }
        for (spec, (name, t)) in self.specs.iter().zip(store.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(format!(
                    "expected {} {:?}, found {name} {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                ));
            }
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

/// Parameter ids and geometry of one (transposed) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub stride: usize,
    pub pad: usize,
    pub transpose: bool,
}

impl ConvLayer {
    pub(crate) fn apply<T: Real>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var, TensorError> {
        let w = params.var(self.weight);
        let b = Some(params.var(self.bias));
        if self.transpose {
            tape.conv_transpose2d(x, w, b, self.stride, self.pad)
        } else {
            tape.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}
