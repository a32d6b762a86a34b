use super::{NumericsError, Result, Tape, Tensor, Var};

const MIN_STEP: f64 = 1e-7;
const MAX_STEP: f64 = 1e-4;

fn check_step(h: f64) -> Result<()> {
    if (MIN_STEP..=MAX_STEP).contains(&h) {
        Ok(())
    } else {
        Err(NumericsError::StepSize(h))
    }
}

/// Central-difference gradient of a scalar function of a flat vector.
pub fn central_differences(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    check_step(h)?;
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`, 0 for empty input.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn scalar_value(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if t.len() != 1 {
        return Err(NumericsError::NotScalar(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}

/// Compares the tape gradient of a scalar function of several inputs against
/// central differences and returns the worst relative error over all
/// coordinates of all inputs.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_step(h)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    scalar_value(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    for (which, input) in inputs.iter().enumerate() {
        let numeric = central_differences(
            |probe| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let value = if j == which {
                            Tensor::new(x.shape().to_vec(), probe.to_vec())?
                        } else {
                            x.clone()
                        };
                        Ok(tape.param(value))
                    })
                    .collect::<Result<_>>()?;
                let out = f(&mut tape, &vars)?;
                scalar_value(&tape, out)
            },
            input.data(),
            h,
        )?;
        let analytic = grads
            .get(vars[which])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}
