//! Fixed-step explicit midpoint integrators, recorded on the tape.
//!
//! Two flavors: an autonomous step for the fused global model, and a driven
//! step for component models with sampled inputs. The half-step input of the
//! driven variant is the arithmetic mean of adjacent samples, i.e. linear
//! interpolation at `t + dt/2`.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn check_finite(tape: &Tape, v: Var, what: &str, step_ctx: &str) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("{what} during {step_ctx}"),
        })
    }
}

/// One midpoint step of `x' = f(x)`: returns `x + dt * f(x + dt/2 * f(x))`.
pub fn midpoint_step_autonomous<F>(tape: &mut Tape, f: &mut F, x: Var, dt: f64) -> Result<Var>
where
    F: FnMut(&mut Tape, Var) -> Var,
{
    assert!(dt > 0.0, "midpoint step requires dt > 0");
    let k1 = f(tape, x);
    check_finite(tape, k1, "derivative", "autonomous midpoint step")?;
    let xm = tape.add_scaled(x, k1, dt / 2.0);
    let k2 = f(tape, xm);
    check_finite(tape, k2, "derivative", "autonomous midpoint step")?;
    Ok(tape.add_scaled(x, k2, dt))
}

/// One midpoint step of `x' = f(x, u)` with sampled inputs. The stage at
/// `t + dt/2` uses `(u[t] + u[t+1]) / 2`.
pub fn midpoint_step_driven<F>(
    tape: &mut Tape,
    f: &mut F,
    x: Var,
    u_seq: &[Var],
    t_index: usize,
    dt: f64,
) -> Result<Var>
where
    F: FnMut(&mut Tape, Var, Var) -> Var,
{
    assert!(dt > 0.0, "midpoint step requires dt > 0");
    if t_index + 1 >= u_seq.len() {
        return Err(Error::IndexError(format!(
            "midpoint_step_driven needs input samples at {} and {}, series has {}",
            t_index,
            t_index + 1,
            u_seq.len()
        )));
    }
    let u_t = u_seq[t_index];
    let u_next = u_seq[t_index + 1];
    let u_sum = tape.add(u_t, u_next);
    let u_half = tape.scale(u_sum, 0.5);

    let k1 = f(tape, x, u_t);
    check_finite(tape, k1, "derivative", "driven midpoint step")?;
    let xm = tape.add_scaled(x, k1, dt / 2.0);
    let k2 = f(tape, xm, u_half);
    check_finite(tape, k2, "derivative", "driven midpoint step")?;
    Ok(tape.add_scaled(x, k2, dt))
}

/// Plain (non-recorded) autonomous midpoint step.
pub fn midpoint_step_autonomous_plain<F>(f: &mut F, x: &Tensor, dt: f64) -> Tensor
where
    F: FnMut(&Tensor) -> Tensor,
{
    let k1 = f(x);
    let xm = x.add(&k1.scale(dt / 2.0));
    let k2 = f(&xm);
    x.add(&k2.scale(dt))
}
