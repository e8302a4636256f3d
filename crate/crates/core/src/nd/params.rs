use super::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Receives decoupled weight decay.
    pub decay: bool,
}

/// Named, ordered collection of learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Order-sensitive fingerprint of every value, for mutation checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in p.value.data() {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Places every parameter on `tape`, as gradient leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self.params.iter().map(|p| tape.leaf(p.value.clone(), trainable)).collect();
        Bound { vars }
    }
}

/// Parameters of a [`ParamStore`] bound to one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradients in store order; zeros for parameters the loss never reached.
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}

impl<'t> Bound<'t> {
    /// Binding over caller-provided variables, in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Self { vars }
    }
}
