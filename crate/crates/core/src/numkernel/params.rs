use super::{KernelError, Tape, Tensor, Var};

/// A model's trainable tensors in a fixed order with stable names.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// Every tensor of `p` as a gradient-tracking leaf, in declaration order.
pub fn bind_params<'t>(tape: &'t Tape, p: &impl Parameters) -> Vec<Var<'t>> {
    p.tensors().into_iter().map(|(_, t)| tape.param(t.clone())).collect()
}

/// Every tensor of `p` as a constant.
pub fn bind_constants<'t>(tape: &'t Tape, p: &impl Parameters) -> Vec<Var<'t>> {
    p.tensors().into_iter().map(|(_, t)| tape.constant(t.clone())).collect()
}

/// All scalars of `p` concatenated into one `[1, n]` row.
pub fn flatten(p: &impl Parameters) -> Tensor {
    let mut data = Vec::with_capacity(p.num_scalars());
    for (_, t) in p.tensors() {
        data.extend_from_slice(t.data());
    }
    Tensor::row(&data)
}

/// Cuts a flattened row (see [`flatten`]) back into variables shaped like
/// the tensors of `p`, so one differentiable input drives a whole model.
pub fn unflatten<'t>(flat: Var<'t>, p: &impl Parameters) -> Result<Vec<Var<'t>>, KernelError> {
    let mut out = Vec::new();
    let mut start = 0;
    for (_, t) in p.tensors() {
        let n = t.numel();
        out.push(flat.slice_last(start, n)?.reshape(t.shape())?);
        start += n;
    }
    if start != flat.value().numel() {
        return Err(KernelError::Contract(format!(
            "flat row has {} scalars, parameters need {start}",
            flat.value().numel()
        )));
    }
    Ok(out)
}

/// Gradients of `vars` (as returned by [`bind_params`]), zeros where none
/// flowed.
pub fn collect_grads(tape: &Tape, vars: &[Var<'_>]) -> Vec<Tensor> {
    vars.iter()
        .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
        .collect()
}
