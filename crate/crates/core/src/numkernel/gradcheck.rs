use super::{KernelError, Tape, Tensor, Var};

/// Largest relative discrepancy between the reverse-mode gradient of `f` at
/// `x` and central finite differences with the given `step`, using the
/// fourth-order stencil `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
/// Its truncation error is `O(h^4)`, so a step near `1e-3` keeps both
/// truncation and rounding far below the gradients of deep composites. The tape is
/// reachable through [`Var::tape`] for creating constants.
///
/// Relative error per coordinate is `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn gradient_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, KernelError>
where
    F: Fn(Var<'_>) -> Result<Var<'_>, KernelError>,
{
    if step <= 0.0 {
        return Err(KernelError::Contract(format!("step must be positive, got {step}")));
    }
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(xv)?;
    tape.backward(y)?;
    let analytic = tape.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |t: Tensor| -> Result<f64, KernelError> {
        let tape = Tape::new();
        let v = tape.constant(t);
        f(v)?.item()
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        let mut at = |offset: f64| {
            probe.data_mut()[i] = orig + offset;
            eval(probe.clone())
        };
        let (up2, up, down, down2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
        probe.data_mut()[i] = orig;
        let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
