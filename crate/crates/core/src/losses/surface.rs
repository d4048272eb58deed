//! Loss and gradient surfaces over the unit square of (target, prediction).

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{grad_lmse, grad_mse, LossKind, LossSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceQuantity {
    Loss,
    /// Derivative of the single-element loss with respect to the prediction.
    Gradient,
}

/// `resolution x resolution` samples; row index walks `y`, column index walks `yhat`.
#[derive(Clone, Debug)]
pub struct SurfaceGrid {
    pub spec: LossSpec,
    pub quantity: SurfaceQuantity,
    pub axis: Vec<f64>,
    pub z: Vec<f64>,
    pub clipped: Vec<bool>,
    pub clip: Option<f64>,
}

impl SurfaceGrid {
    pub fn resolution(&self) -> usize {
        self.axis.len()
    }

    /// `(z, clipped)` at `y = axis[i]`, `yhat = axis[j]`.
    pub fn at(&self, i: usize, j: usize) -> (f64, bool) {
        let k = i * self.resolution() + j;
        (self.z[k], self.clipped[k])
    }

    /// CSV with header `y,yhat,z,clipped`; floats carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y,yhat,z,clipped")?;
        let r = self.resolution();
        for i in 0..r {
            for j in 0..r {
                let (z, c) = self.at(i, j);
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{}",
                    self.axis[i],
                    self.axis[j],
                    z,
                    u8::from(c)
                )?;
            }
        }
        Ok(())
    }
}

fn point_gradient(spec: &LossSpec, y: f64, yhat: f64) -> Result<f64> {
    match spec.kind {
        LossKind::Mse => Ok(grad_mse(&[y], &[yhat])?[0]),
        LossKind::Lmse => Ok(grad_lmse(&[y], &[yhat], spec.epsilon)?[0]),
        _ => {
            let t = Tensor::new(vec![1], vec![y])?;
            let p = Tensor::param(vec![1], vec![yhat])?;
            spec.apply(&t, &p)?.backward()?;
            Ok(p.grad().map_or(0.0, |g| g[0]))
        }
    }
}

/// Sample a loss (or its prediction-gradient) on a uniform grid over `[0, 1]^2`.
///
/// Cells whose magnitude exceeds `clip` are replaced by `sign(z) * clip` and
/// flagged.
pub fn surface_grid(
    spec: &LossSpec,
    quantity: SurfaceQuantity,
    resolution: usize,
    clip: Option<f64>,
) -> Result<SurfaceGrid> {
    if resolution < 2 {
        return Err(Error::Config(format!(
            "surface resolution must be >= 2, got {resolution}"
        )));
    }
    if let Some(c) = clip {
        if !(c > 0.0) {
            return Err(Error::Config(format!(
                "clip threshold must be positive, got {c}"
            )));
        }
    }
    let axis: Vec<f64> = (0..resolution)
        .map(|i| i as f64 / (resolution - 1) as f64)
        .collect();
    let mut z = Vec::with_capacity(resolution * resolution);
    let mut clipped = Vec::with_capacity(resolution * resolution);
    for &y in &axis {
        for &yhat in &axis {
            let v = match quantity {
                SurfaceQuantity::Loss => spec.evaluate(&[y], &[yhat])?,
                SurfaceQuantity::Gradient => point_gradient(spec, y, yhat)?,
            };
            match clip {
                Some(c) if v.abs() > c => {
                    z.push(c.copysign(v));
                    clipped.push(true);
                }
                _ => {
                    z.push(v);
                    clipped.push(false);
                }
            }
        }
    }
    Ok(SurfaceGrid {
        spec: *spec,
        quantity,
        axis,
        z,
        clipped,
        clip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_loss_valley_on_diagonal() {
        let g = surface_grid(&LossSpec::mse(), SurfaceQuantity::Loss, 11, None).unwrap();
        for i in 0..11 {
            assert_eq!(g.at(i, i).0, 0.0);
        }
    }

    #[test]
    fn lmse_corner_hits_ceiling() {
        let g = surface_grid(&LossSpec::lmse(), SurfaceQuantity::Loss, 5, None).unwrap();
        let (z, c) = g.at(0, 4);
        assert!((z - 16.11809565095832).abs() < 1e-9, "{z}");
        assert!(!c);
    }

    #[test]
    fn gradient_at_one_half() {
        // resolution 3 puts 0.5 on the axis
        let clip = Some(10.0);
        let m = surface_grid(&LossSpec::mse(), SurfaceQuantity::Gradient, 3, clip).unwrap();
        let l = surface_grid(
            &LossSpec::lmse().with_epsilon(1e-7),
            SurfaceQuantity::Gradient,
            3,
            clip,
        )
        .unwrap();
        assert_eq!(m.at(2, 1), (-1.0, false));
        let (z, c) = l.at(2, 1);
        assert!((z - (-1.0 / (0.75 + 1e-7))).abs() < 1e-12);
        assert!(!c);
        // y = 0, yhat = 1 blows past the clip for LMSE only
        assert_eq!(l.at(0, 2), (10.0, true));
        assert_eq!(m.at(0, 2), (2.0, false));
    }

    #[test]
    fn csv_layout() {
        let g = surface_grid(&LossSpec::mse(), SurfaceQuantity::Loss, 2, None).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "y,yhat,z,clipped");
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[2],
            "0.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,0"
        );
        let z: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(z, 1.0);
    }

    #[test]
    fn rejects_tiny_resolution() {
        assert!(surface_grid(&LossSpec::mse(), SurfaceQuantity::Loss, 1, None).is_err());
    }

    #[test]
    fn autodiff_fallback_for_mae() {
        let g = surface_grid(
            &LossSpec::new(LossKind::Mae),
            SurfaceQuantity::Gradient,
            3,
            None,
        )
        .unwrap();
        assert_eq!(g.at(2, 0).0, -1.0);
        assert_eq!(g.at(0, 2).0, 1.0);
    }
}
