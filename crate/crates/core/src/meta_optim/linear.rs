use super::{
    check_len, clamp_log_decay, finite, meta_update, positive, predict_checked, FadeIdbdParam, FadeParam, IdbdParam,
    MetaError, MetaHyper, StepOutput,
};

/// FADE on an online linear regressor: adaptive per-weight decay, scalar step size.
///
/// Per weight, in order: `gamma += theta_lambda * delta x * g`, `lambda = exp(gamma)`,
/// `g = g [1 - lambda - alpha x^2]^+ - lambda w`, `w = (1 - lambda) w + alpha delta x`.
/// The trace update reads the pre-update weight.
pub fn fade_step(params: &mut [FadeParam], x: &[f64], y_star: f64, hyper: &MetaHyper) -> Result<StepOutput, MetaError> {
    check_len(params.len(), x.len())?;
    let out = predict_checked(params.iter().map(|p| p.w), x, y_star)?;
    let alpha = hyper.alpha;
    for (i, (p, &xi)) in params.iter_mut().zip(x).enumerate() {
        let neg_grad = out.error * xi;
        let gamma = clamp_log_decay(meta_update(p.gamma, hyper.theta_lambda, neg_grad, p.g), hyper.clamp_decay);
        let lambda = finite(i, "lambda", gamma.exp())?;
        let g = finite(i, "g", p.g * positive(1.0 - lambda - alpha * (xi * xi)) - lambda * p.w)?;
        let w = finite(i, "w", (1.0 - lambda) * p.w + alpha * neg_grad)?;
        *p = FadeParam {
            w,
            gamma: finite(i, "gamma", gamma)?,
            lambda,
            g,
        };
    }
    Ok(out)
}

/// IDBD: adaptive per-weight step size, no decay.
pub fn idbd_step(params: &mut [IdbdParam], x: &[f64], y_star: f64, hyper: &MetaHyper) -> Result<StepOutput, MetaError> {
    check_len(params.len(), x.len())?;
    let out = predict_checked(params.iter().map(|p| p.w), x, y_star)?;
    for (i, (p, &xi)) in params.iter_mut().zip(x).enumerate() {
        let neg_grad = out.error * xi;
        let beta = finite(i, "beta", meta_update(p.beta, hyper.theta_alpha, neg_grad, p.h))?;
        let alpha = finite(i, "alpha", beta.exp())?;
        let w = finite(i, "w", p.w + alpha * neg_grad)?;
        let h = finite(i, "h", p.h * positive(1.0 - alpha * (xi * xi)) + alpha * neg_grad)?;
        *p = IdbdParam { w, beta, alpha, h };
    }
    Ok(out)
}

/// IDBD with a fixed scalar decay `lambda_fixed` on every weight.
pub fn idbd_wd_step(
    params: &mut [IdbdParam],
    x: &[f64],
    y_star: f64,
    hyper: &MetaHyper,
    lambda_fixed: f64,
) -> Result<StepOutput, MetaError> {
    check_len(params.len(), x.len())?;
    let out = predict_checked(params.iter().map(|p| p.w), x, y_star)?;
    let lambda = lambda_fixed;
    for (i, (p, &xi)) in params.iter_mut().zip(x).enumerate() {
        let neg_grad = out.error * xi;
        let beta = finite(i, "beta", meta_update(p.beta, hyper.theta_alpha, neg_grad, p.h))?;
        let alpha = finite(i, "alpha", beta.exp())?;
        let w = finite(i, "w", (1.0 - lambda) * p.w + alpha * neg_grad)?;
        let h = finite(i, "h", p.h * positive(1.0 - lambda - alpha * (xi * xi)) + alpha * neg_grad)?;
        *p = IdbdParam { w, beta, alpha, h };
    }
    Ok(out)
}

/// FADE + IDBD: adaptive decay and adaptive step size, decay decoupled from the step size.
///
/// Both meta-parameters move from the old traces; both traces share the bracket
/// `[1 - lambda - alpha x^2]^+` built from the new rates.
pub fn fade_idbd_step(
    params: &mut [FadeIdbdParam],
    x: &[f64],
    y_star: f64,
    hyper: &MetaHyper,
) -> Result<StepOutput, MetaError> {
    check_len(params.len(), x.len())?;
    let out = predict_checked(params.iter().map(|p| p.w), x, y_star)?;
    for (i, (p, &xi)) in params.iter_mut().zip(x).enumerate() {
        let neg_grad = out.error * xi;
        let beta = finite(i, "beta", meta_update(p.beta, hyper.theta_alpha, neg_grad, p.h))?;
        let alpha = finite(i, "alpha", beta.exp())?;
        let gamma = clamp_log_decay(meta_update(p.gamma, hyper.theta_lambda, neg_grad, p.g), hyper.clamp_decay);
        let gamma = finite(i, "gamma", gamma)?;
        let lambda = finite(i, "lambda", gamma.exp())?;
        let bracket = positive(1.0 - lambda - alpha * (xi * xi));
        let h = finite(i, "h", p.h * bracket + alpha * neg_grad)?;
        let g = finite(i, "g", p.g * bracket - lambda * p.w)?;
        let w = finite(i, "w", (1.0 - lambda) * p.w + alpha * neg_grad)?;
        *p = FadeIdbdParam {
            w,
            gamma,
            lambda,
            g,
            beta,
            alpha,
            h,
        };
    }
    Ok(out)
}

/// Coupled variant: the decay comes from an L2 term, so each weight shrinks by
/// `alpha * lambda` instead of `lambda`.
///
/// `w = (1 - alpha lambda) w + alpha delta x`; both traces use `alpha lambda` in
/// the bracket and both carry a `- alpha lambda w` term.
pub fn coupled_step(
    params: &mut [FadeIdbdParam],
    x: &[f64],
    y_star: f64,
    hyper: &MetaHyper,
) -> Result<StepOutput, MetaError> {
    check_len(params.len(), x.len())?;
    let out = predict_checked(params.iter().map(|p| p.w), x, y_star)?;
    for (i, (p, &xi)) in params.iter_mut().zip(x).enumerate() {
        let neg_grad = out.error * xi;
        let beta = finite(i, "beta", meta_update(p.beta, hyper.theta_alpha, neg_grad, p.h))?;
        let alpha = finite(i, "alpha", beta.exp())?;
        let gamma = clamp_log_decay(meta_update(p.gamma, hyper.theta_lambda, neg_grad, p.g), hyper.clamp_decay);
        let gamma = finite(i, "gamma", gamma)?;
        let lambda = finite(i, "lambda", gamma.exp())?;
        let shrink = alpha * lambda;
        let bracket = positive(1.0 - shrink - alpha * (xi * xi));
        let g = finite(i, "g", p.g * bracket - shrink * p.w)?;
        let h = finite(i, "h", p.h * bracket + alpha * neg_grad - shrink * p.w)?;
        let w = finite(i, "w", (1.0 - shrink) * p.w + alpha * neg_grad)?;
        *p = FadeIdbdParam {
            w,
            gamma,
            lambda,
            g,
            beta,
            alpha,
            h,
        };
    }
    Ok(out)
}
