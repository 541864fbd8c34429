//! Central finite-difference validation of every analytic backward pass.

use nalgebra::DVector;

use crate::error::Result;
use crate::geometry::{flatten, LinearShapeModel, Mesh};

use super::loss::masked_l1;
use super::mapping::MappingNetwork;
use super::siren::{FilmParams, SirenDecoder};

/// `max_i |analytic_i − numeric_i| / max(1e-8, |numeric_i|)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max)
}

/// Central differences of `f` over `params` with step `h`.
pub fn central_diff_grad(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work)?;
        work[i] = orig - h;
        let minus = f(&work)?;
        work[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Checks the mapping-network backward pass through the full pipeline
/// (network → linear decoder → masked L1). Returns the max relative error.
pub fn grad_check_mapping(
    net: &MappingNetwork,
    model: &LinearShapeModel,
    feature: &DVector<f64>,
    gt: &Mesh,
    h: f64,
) -> Result<f64> {
    let trace = net.forward_trace(feature)?;
    let pred = model.decode(trace.output(), None)?;
    let (_, grad_vertices) = masked_l1(&pred, gt, model.kappa())?;
    let grad_z = model.shape_basis().transpose() * flatten(&grad_vertices);
    let analytic = net.backward(&trace, &grad_z).to_flat();

    let params = net.params_flat();
    let mut probe = net.clone();
    let numeric = central_diff_grad(
        |p| {
            probe.set_params_flat(p);
            let z = probe.forward(feature)?;
            let mesh = model.decode(&z, None)?;
            Ok(masked_l1(&mesh, gt, model.kappa())?.0)
        },
        &params,
        h,
    )?;
    Ok(max_rel_error(&analytic, &numeric))
}

/// Checks the decoder Jacobian alone: the loss as a function of z. The map is
/// piecewise linear, so agreement is near machine precision off the kinks.
pub fn grad_check_linear_decoder(
    model: &LinearShapeModel,
    z: &DVector<f64>,
    gt: &Mesh,
    h: f64,
) -> Result<f64> {
    let pred = model.decode(z, None)?;
    let (_, grad_vertices) = masked_l1(&pred, gt, model.kappa())?;
    let analytic_vec = model.shape_basis().transpose() * flatten(&grad_vertices);
    let analytic: Vec<f64> = analytic_vec.iter().copied().collect();
    let params: Vec<f64> = z.iter().copied().collect();
    let numeric = central_diff_grad(
        |p| {
            let zz = DVector::from_column_slice(p);
            let mesh = model.decode(&zz, None)?;
            Ok(masked_l1(&mesh, gt, model.kappa())?.0)
        },
        &params,
        h,
    )?;
    Ok(max_rel_error(&analytic, &numeric))
}

/// Checks the sinusoidal trunk backward pass under fixed FiLM modulation.
pub fn grad_check_siren_trunk(
    dec: &SirenDecoder,
    film: &FilmParams,
    vertices: &[nalgebra::Vector3<f64>],
    targets: &[nalgebra::Vector3<f64>],
    h: f64,
) -> Result<f64> {
    let (_, analytic) = dec.trunk_loss_and_grad(film, vertices, targets);
    let params = dec.trunk_params_flat();
    let mut probe = dec.clone();
    let numeric = central_diff_grad(
        |p| {
            probe.set_trunk_params_flat(p);
            Ok(probe.trunk_loss_and_grad(film, vertices, targets).0)
        },
        &params,
        h,
    )?;
    Ok(max_rel_error(&analytic, &numeric))
}
