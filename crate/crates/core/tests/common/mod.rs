//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::rc::Rc;

use topicfuse::numkernel::{gradient_check, sample_normal, KernelError, RngState, Tape, Tensor, Var};

pub const KERNEL_STEP: f64 = 1e-5;
pub const INSTANCES: u64 = 100;

pub type Op = for<'t> fn(&'t Tape, Var<'t>, &Tensor, &mut RngState) -> Result<Var<'t>, KernelError>;

/// One differentiable kernel op under test.
pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    pub min_cols: usize,
    pub op: Op,
}

fn case(name: &'static str, tol: f64, min_cols: usize, op: Op) -> Case {
    Case { name, tol, min_cols, op }
}

/// Largest relative gradient error of `c` over [`INSTANCES`] random inputs.
/// The op is wrapped in a random linear read-out so every output coordinate
/// contributes to the scalar being differentiated.
pub fn worst_error(c: &Case) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = RngState::new(1000 + seed);
        let (r, cols) = (1 + rng.next_below(4), c.min_cols + rng.next_below(5));
        let x = sample_normal(&mut rng, &[r, cols], 1.0);
        let side = sample_normal(&mut rng, &[r, cols], 1.0);
        let probe = rng;
        let err = gradient_check(
            |v| {
                let mut local = probe;
                let y = (c.op)(v.tape(), v, &side, &mut local)?;
                let w = v.tape().constant(sample_normal(&mut local, &y.shape(), 1.0));
                Ok(y.mul(w)?.sum())
            },
            &x,
            KERNEL_STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// Every differentiable op of the kernel with its tolerance.
pub fn kernel_cases() -> Vec<Case> {
    let mut v = Vec::new();
    v.push(case("add", 1e-6, 1, |t, x, s, _| x.add(t.constant(s.clone()))));
    v.push(case("sub", 1e-6, 1, |t, x, s, _| t.constant(s.clone()).sub(x)));
    v.push(case("mul", 1e-6, 1, |t, x, s, _| x.mul(t.constant(s.clone()))));
    v.push(case("mul self", 1e-6, 1, |_, x, _, _| x.mul(x)));
    v.push(case("scale", 1e-6, 1, |_, x, _, _| Ok(x.scale(-2.5))));
    v.push(case("add_scalar", 1e-6, 1, |_, x, _, _| Ok(x.add_scalar(0.7))));
    v.push(case("sigmoid", 1e-6, 1, |_, x, _, _| Ok(x.sigmoid())));
    v.push(case("tanh", 1e-6, 1, |_, x, _, _| Ok(x.tanh())));
    v.push(case("gelu", 1e-6, 1, |_, x, _, _| Ok(x.gelu())));
    v.push(case("exp", 1e-6, 1, |_, x, _, _| Ok(x.exp())));
    v.push(case("log", 1e-6, 1, |_, x, _, _| x.mul(x)?.add_scalar(0.5).log()));

    v.push(case("add_bias", 1e-6, 1, |t, x, _, rng| {
        let n = x.shape()[1];
        x.add_bias(t.constant(sample_normal(rng, &[n], 1.0)))
    }));
    v.push(case("bias grad", 1e-6, 1, |t, x, s, _| {
        // x enters as the bias of a constant matrix
        let row = x.slice_rows(0, 1)?.reshape(&[x.shape()[1]])?;
        t.constant(s.clone()).add_bias(row)
    }));
    v.push(case("matmul L", 1e-6, 1, |t, x, _, rng| {
        let k = x.shape()[1];
        x.matmul(t.constant(sample_normal(rng, &[k, 3], 1.0)))
    }));
    v.push(case("matmul R", 1e-6, 1, |t, x, _, rng| {
        let k = x.shape()[0];
        t.constant(sample_normal(rng, &[2, k], 1.0)).matmul(x)
    }));
    v.push(case("matmul_bt", 1e-6, 1, |t, x, _, rng| {
        let k = x.shape()[1];
        let b = t.constant(sample_normal(rng, &[4, k], 1.0));
        x.matmul_bt(b)?.add(b.matmul_bt(x)?.transpose()?)
    }));
    v.push(case("transpose", 1e-6, 1, |_, x, _, _| x.transpose()));
    v.push(case("concat", 1e-6, 1, |t, x, s, _| Var::concat(&[t.constant(s.clone()), x, x])));
    v.push(case("slice_last", 1e-6, 1, |_, x, _, _| {
        let c = x.shape()[1];
        x.slice_last(c / 2, c - c / 2)
    }));
    v.push(case("slice_rows", 1e-6, 1, |_, x, _, _| x.slice_rows(0, 1)));
    v.push(case("sum", 1e-6, 1, |_, x, _, _| Ok(x.sum())));
    v.push(case("mean", 1e-6, 1, |_, x, _, _| x.mean()));
    v.push(case("pick", 1e-6, 1, |_, x, _, _| x.pick(0)));
    v.push(case("reshape", 1e-6, 1, |_, x, _, _| {
        let n = x.shape().iter().product();
        x.reshape(&[n])
    }));
    v.push(case("embedding", 1e-6, 1, |_, x, _, rng| {
        let v = x.shape()[0];
        let ids: Vec<usize> = (0..5).map(|_| rng.next_below(v)).collect();
        x.embedding(&ids)
    }));

    v.push(case("softmax last", 1e-6, 1, |_, x, _, _| x.softmax(1)));
    v.push(case("softmax first", 1e-6, 1, |_, x, _, _| x.softmax(0)));
    v.push(case("log_softmax", 1e-6, 1, |_, x, _, _| x.log_softmax(1)));
    v.push(case("masked_softmax", 1e-6, 1, |_, x, _, rng| {
        let c = x.shape()[1];
        let mut keep: Vec<bool> = (0..c).map(|_| rng.next_below(3) > 0).collect();
        keep[0] = true;
        x.masked_softmax(Rc::from(keep))
    }));
    // two-wide rows normalize to (+-1, -+1) whose gradient is ~eps-sized
    v.push(case("layer_norm x", 1e-6, 3, |t, x, _, rng| {
        let n = x.shape()[1];
        let g = t.constant(sample_normal(rng, &[n], 1.0));
        let b = t.constant(sample_normal(rng, &[n], 1.0));
        x.layer_norm(g, b)
    }));
    v.push(case("layer_norm g", 1e-6, 3, |t, x, s, _| {
        let n = x.shape()[1];
        let g = x.slice_rows(0, 1)?.reshape(&[n])?;
        let b = g.scale(0.5);
        t.constant(s.clone()).layer_norm(g, b)
    }));
    v.push(case("xent", 1e-6, 1, |_, x, _, _| {
        let c = x.shape()[1];
        let logp = x.log_softmax(1)?;
        Ok(logp.pick(c - 1)?.neg())
    }));
    v
}
