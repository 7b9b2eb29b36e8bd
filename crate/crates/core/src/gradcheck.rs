//! Central-difference gradient checking in double precision.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn scalar_output(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    if g.value(out).is_scalar() {
        Ok(out)
    } else {
        g.sum(out)
    }
}

/// Max over coordinates of `|analytic − central| / max(1, |central|)` for a
/// function of one tensor. Non-scalar outputs are summed.
pub fn gradcheck<F>(build: F, input: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    gradcheck_many(|g, vars| build(g, vars[0]), std::slice::from_ref(input), h)
}

/// [`gradcheck`] over several inputs at once.
pub fn gradcheck_many<F>(build: F, inputs: &[Tensor<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let out = scalar_output(&mut g, out)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite { op: "gradcheck" });
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let out = scalar_output(&mut g, out)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for (t, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("trainable input").data().to_vec();
        for (c, &exact) in analytic.iter().enumerate() {
            let orig = values[t].data()[c];
            values[t].data_mut()[c] = orig + h;
            let plus = eval(&values)?;
            values[t].data_mut()[c] = orig - h;
            let minus = eval(&values)?;
            values[t].data_mut()[c] = orig;
            let central = (plus - minus) / (2.0 * h);
            let err = (exact - central).abs() / central.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
