//! The generative sequence model: unrolled forward NLL, full (untruncated)
//! backpropagation through time, and weight-noise perturbation.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use crate::cells::{init_params, CellKind, CellParams, GruVariant, RecurrentState, StepTrace};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::heads::{HeadCache, HeadKind, OutputHead};
use crate::numerics::{RngStream, Vector};
use crate::params::{Parameters, TensorView, TensorViewMut};

/// Default standard deviation of the per-update weight noise.
pub const WEIGHT_NOISE_STD: f64 = 0.075;

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    cell: CellParams,
    head: OutputHead,
    gru_variant: GruVariant,
}

/// Everything needed to build a freshly initialized model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelShape {
    pub kind: CellKind,
    pub head: HeadKind,
    pub hidden: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub gru_variant: GruVariant,
}

/// Gradient tree, congruent with [`SequenceModel`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub cell: CellParams,
    pub head: OutputHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatchItem {
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
}

impl SequenceBatchItem {
    pub fn new(inputs: Vec<Vector>, targets: Vec<Vector>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::Data("empty sequence".into()));
        }
        Ok(SequenceBatchItem { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Steps `start..` with the same pairing.
    pub fn suffix(&self, start: usize) -> Result<SequenceBatchItem> {
        SequenceBatchItem::new(self.inputs[start..].to_vec(), self.targets[start..].to_vec())
    }
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub total_nll: f64,
    pub per_step: Vec<f64>,
    pub traces: Vec<StepTrace>,
    pub head_caches: Vec<HeadCache>,
    pub final_state: RecurrentState,
}

impl SequenceModel {
    pub fn new(shape: ModelShape, rng: &mut RngStream, init_scale: f64) -> Result<Self> {
        let cell = init_params(shape.kind, shape.hidden, shape.d_in, rng, init_scale)?;
        let head = OutputHead::init(shape.head, shape.d_out, shape.hidden, rng, init_scale)?;
        SequenceModel::from_parts(cell, head, shape.gru_variant)
    }

    /// All-zero parameters (including biases).
    pub fn zeros(shape: ModelShape) -> Self {
        SequenceModel {
            cell: CellParams::zeros(shape.kind, shape.hidden, shape.d_in),
            head: OutputHead::zeros(shape.head, shape.d_out, shape.hidden),
            gru_variant: shape.gru_variant,
        }
    }

    pub fn from_parts(cell: CellParams, head: OutputHead, gru_variant: GruVariant) -> Result<Self> {
        if head.hidden_size() != cell.hidden_size() {
            return Err(Error::shape(
                "SequenceModel::from_parts",
                format!("head reading {} hidden units", cell.hidden_size()),
                head.hidden_size(),
            ));
        }
        Ok(SequenceModel {
            cell,
            head,
            gru_variant,
        })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            kind: self.kind(),
            head: self.head.kind(),
            hidden: self.hidden_size(),
            d_in: self.d_in(),
            d_out: self.d_out(),
            gru_variant: self.gru_variant,
        }
    }

    pub fn kind(&self) -> CellKind {
        self.cell.kind()
    }

    pub fn cell(&self) -> &CellParams {
        &self.cell
    }

    pub fn cell_mut(&mut self) -> &mut CellParams {
        &mut self.cell
    }

    pub fn head(&self) -> &OutputHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut OutputHead {
        &mut self.head
    }

    pub fn gru_variant(&self) -> GruVariant {
        self.gru_variant
    }

    pub fn hidden_size(&self) -> usize {
        self.cell.hidden_size()
    }

    pub fn d_in(&self) -> usize {
        self.cell.input_size()
    }

    pub fn d_out(&self) -> usize {
        self.head.d_out()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            cell: self.cell.zero_like(),
            head: self.head.zero_like(),
        }
    }

    fn check_item(&self, item: &SequenceBatchItem) -> Result<()> {
        if item.is_empty() {
            return Err(Error::Data("empty sequence".into()));
        }
        if item.inputs.len() != item.targets.len() {
            return Err(Error::Data("inputs and targets differ in length".into()));
        }
        if let Some(x) = item.inputs.iter().find(|x| x.len() != self.d_in()) {
            return Err(Error::shape("model input", self.d_in(), x.len()));
        }
        if let Some(t) = item.targets.iter().find(|t| t.len() != self.d_out()) {
            return Err(Error::shape("model target", self.d_out(), t.len()));
        }
        Ok(())
    }

    fn run(&self, initial: RecurrentState, item: &SequenceBatchItem, keep: bool) -> Result<ForwardPass> {
        self.check_item(item)?;
        let steps = item.len();
        let mut per_step = Vec::with_capacity(steps);
        let mut traces = Vec::with_capacity(if keep { steps } else { 0 });
        let mut caches = Vec::with_capacity(if keep { steps } else { 0 });
        let mut state = initial;
        let mut total = 0.0;
        for (x, target) in item.inputs.iter().zip(&item.targets) {
            let trace = self.cell.step(&state, x, self.gru_variant)?;
            let cache = self.head.forward_unchecked(trace.h());
            let nll = self.head.nll(&cache, target)?;
            total += nll;
            per_step.push(nll);
            state = trace.state();
            if keep {
                traces.push(trace);
                caches.push(cache);
            }
        }
        Ok(ForwardPass {
            total_nll: total,
            per_step,
            traces,
            head_caches: caches,
            final_state: state,
        })
    }
}

/// Unrolled forward pass from the zero state, keeping every cache needed by [`bptt`].
pub fn forward_nll(model: &SequenceModel, item: &SequenceBatchItem) -> Result<ForwardPass> {
    model.run(model.cell.initial_state(), item, true)
}

/// Forward pass starting from an arbitrary recurrent state.
pub fn forward_nll_from(
    model: &SequenceModel,
    state: RecurrentState,
    item: &SequenceBatchItem,
) -> Result<ForwardPass> {
    model.run(state, item, true)
}

/// Total NLL of one sequence without retaining caches.
pub fn sequence_nll(model: &SequenceModel, item: &SequenceBatchItem) -> Result<f64> {
    Ok(model.run(model.cell.initial_state(), item, false)?.total_nll)
}

/// Exact gradient of the total sequence NLL with respect to every parameter.
pub fn bptt(model: &SequenceModel, item: &SequenceBatchItem) -> Result<(Gradients, f64)> {
    let pass = forward_nll(model, item)?;
    let mut grads = model.zero_gradients();
    let n = model.hidden_size();
    let mut carry_h = Vector::zeros(n);
    let mut carry_c = (model.kind() == CellKind::Lstm).then(|| Vector::zeros(n));

    for t in (0..item.len()).rev() {
        let trace = &pass.traces[t];
        let mut grad_h =
            model
                .head
                .backward_into(trace.h(), &item.targets[t], &pass.head_caches[t], &mut grads.head)?;
        grad_h.iter_mut().zip(carry_h.iter()).for_each(|(g, c)| *g += c);
        let (gh_prev, gc_prev, _grad_x) = model.cell.backstep_into(
            trace,
            &grad_h,
            carry_c.as_deref(),
            &mut grads.cell,
        )?;
        carry_h = gh_prev;
        carry_c = gc_prev;
    }
    Ok((grads, pass.total_nll))
}

/// Copy of `model` with i.i.d. `N(0, std²)` added to every weight matrix and
/// peephole diagonal. Biases are left untouched.
pub fn perturb_weights(model: &SequenceModel, rng: &mut RngStream, std: f64) -> Result<SequenceModel> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Param(format!("weight-noise std must be >= 0, got {std}")));
    }
    let mut noisy = model.clone();
    if std == 0.0 {
        return Ok(noisy);
    }
    for t in noisy.tensors_mut() {
        if t.role.is_noisy() {
            for x in t.values.iter_mut() {
                *x += std * rng.standard_normal();
            }
        }
    }
    Ok(noisy)
}

/// Per-timestep average NLL over a dataset: `Σ total_nll / Σ T`.
pub fn average_nll(model: &SequenceModel, dataset: &[SequenceBatchItem]) -> Result<f64> {
    average_nll_with(model, dataset, Execution::default())
}

pub fn average_nll_with(
    model: &SequenceModel,
    dataset: &[SequenceBatchItem],
    exec: Execution,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot average over an empty dataset".into()));
    }
    let totals = exec.map(dataset, |item| sequence_nll(model, item));
    let mut sum = 0.0;
    let mut steps = 0usize;
    for (total, item) in totals.into_iter().zip(dataset) {
        sum += total?;
        steps += item.len();
    }
    Ok(sum / steps as f64)
}

/// Summed gradients and NLL over several sequences, reduced in input order.
pub fn batch_gradients(
    model: &SequenceModel,
    items: &[SequenceBatchItem],
    exec: Execution,
) -> Result<(Gradients, f64)> {
    if items.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let parts = exec.map(items, |item| bptt(model, item));
    let mut grads = model.zero_gradients();
    let mut total = 0.0;
    for part in parts {
        let (g, nll) = part?;
        grads.add_assign(&g);
        total += nll;
    }
    Ok((grads, total))
}

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.values.iter_mut().zip(b.values).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.values.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

macro_rules! impl_model_parameters {
    ($ty:ty) => {
        impl Parameters for $ty {
            fn tensors(&self) -> Vec<TensorView<'_>> {
                let mut v = self.cell.tensors();
                v.extend(self.head.tensors());
                v
            }

            fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
                let mut v = self.cell.tensors_mut();
                v.extend(self.head.tensors_mut());
                v
            }
        }
    };
}

impl_model_parameters!(SequenceModel);
impl_model_parameters!(Gradients);
