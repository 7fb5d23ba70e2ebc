use super::{Param, Tape, Var};
use crate::error::Result;
use crate::tensor::C64;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `|analytic - fd| / (|analytic| + 1e-12)` per parameter tensor, with
    /// `|.|` the Euclidean norm over the tensor's real components.
    pub per_param: Vec<(String, f64)>,
    /// Largest entry of `per_param`.
    pub max_rel: f64,
    /// Same ratio evaluated entry by entry, maximized over all entries.
    pub max_elementwise: f64,
}

fn eval<F>(params: &[Param], f: &mut F) -> Result<(Tape, Var)>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, loss))
}

fn loss_at<F>(params: &[Param], f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, loss) = eval(params, f)?;
    Ok(tape.value(loss).re()[0])
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences with step `h`. `f` receives one tape variable per
/// entry of `params`, in order. Complex entries are perturbed along the
/// real and imaginary axes separately; the analytic counterparts are
/// `2 Re(grad)` and `2 Im(grad)` under the conjugate Wirtinger convention.
pub fn grad_check<F>(params: &[Param], h: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, loss) = eval(params, &mut f)?;
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<Param> = params.to_vec();
    analytic.iter_mut().for_each(Param::zero_grad);
    grads.accumulate_into(&mut analytic)?;
    drop(tape);

    let mut work = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_elementwise = 0.0f64;
    for p in 0..params.len() {
        let complex = params[p].value.is_complex();
        let comps = if complex { 2 } else { 1 };
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for e in 0..params[p].value.len() {
            for comp in 0..comps {
                let a = if complex {
                    let g = analytic[p].grad.cx()[e];
                    if comp == 0 { 2.0 * g.re } else { 2.0 * g.im }
                } else {
                    analytic[p].grad.re()[e]
                };
                let step = if comp == 0 { C64::new(h, 0.0) } else { C64::new(0.0, h) };
                let nudge = |sign: f64, w: &mut [Param]| {
                    if complex {
                        w[p].value.cx_mut()[e] += step * sign;
                    } else {
                        w[p].value.re_mut()[e] += h * sign;
                    }
                };
                nudge(1.0, &mut work);
                let plus = loss_at(&work, &mut f)?;
                nudge(-2.0, &mut work);
                let minus = loss_at(&work, &mut f)?;
                work[p].value = params[p].value.clone();
                let fd = (plus - minus) / (2.0 * h);
                diff2 += (a - fd) * (a - fd);
                norm2 += a * a;
                max_elementwise = max_elementwise.max((a - fd).abs() / (a.abs() + 1e-12));
            }
        }
        per_param.push((params[p].name.clone(), diff2.sqrt() / (norm2.sqrt() + 1e-12)));
    }
    let max_rel = per_param.iter().fold(0.0f64, |m, (_, r)| m.max(*r));
    Ok(GradCheck {
        per_param,
        max_rel,
        max_elementwise,
    })
}
