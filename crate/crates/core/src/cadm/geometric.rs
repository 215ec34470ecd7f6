use super::{AngleDelayMap, GaussianPathDist, MapEvaluation, PathJacobian};
use crate::error::{Error, Result};
use crate::geometry::{single_bounce_paths, Environment, PathOrigin, Point2, SPEED_OF_LIGHT};

/// Exact angle-delay map of a known scene: means are the true single-bounce
/// path parameters, variances are constant.
#[derive(Debug, Clone)]
pub struct GeometricMap {
    pub env: Environment,
    pub l_prime: usize,
    pub var_theta: f64,
    pub var_tau: f64,
}

impl GeometricMap {
    pub fn new(env: Environment, l_prime: usize, var_theta: f64, var_tau: f64) -> Result<Self> {
        if !(var_theta > 0.0 && var_tau > 0.0) {
            return Err(Error::InvalidConfig("map variances must be positive".into()));
        }
        if l_prime == 0 || env.candidate_count() < l_prime {
            return Err(Error::InvalidConfig(format!(
                "scene offers {} paths, L'={l_prime}",
                env.candidate_count()
            )));
        }
        Ok(Self {
            env,
            l_prime,
            var_theta,
            var_tau,
        })
    }
}

impl AngleDelayMap for GeometricMap {
    fn l_prime(&self) -> usize {
        self.l_prime
    }

    fn predict(&self, loc: Point2) -> Result<Vec<GaussianPathDist>> {
        self.evaluate(loc).map(|e| e.dists)
    }

    fn evaluate(&self, loc: Point2) -> Result<MapEvaluation> {
        let w = single_bounce_paths(&self.env, loc, self.l_prime)?;
        let mut dists = Vec::with_capacity(self.l_prime);
        let mut jacobian = Vec::with_capacity(self.l_prime);
        for p in w.paths() {
            dists.push(GaussianPathDist {
                mu_theta: p.aod_rad,
                var_theta: self.var_theta,
                mu_tau: p.delay_s,
                var_tau: self.var_tau,
            });
            let mut j = PathJacobian::default();
            match p.origin {
                PathOrigin::Direct => {
                    let (dx, dy) = (loc.x - self.env.bs.x, loc.y - self.env.bs.y);
                    let r2 = dx * dx + dy * dy;
                    let r = r2.sqrt();
                    j.mu_theta = [-dy / r2, dx / r2];
                    j.mu_tau = [dx / (r * SPEED_OF_LIGHT), dy / (r * SPEED_OF_LIGHT)];
                }
                PathOrigin::Scatterer(i) => {
                    // AoD toward a fixed scatterer does not move with the location
                    let s = self.env.scatterers[i].position;
                    let (dx, dy) = (loc.x - s.x, loc.y - s.y);
                    let r = dx.hypot(dy);
                    j.mu_tau = [dx / (r * SPEED_OF_LIGHT), dy / (r * SPEED_OF_LIGHT)];
                }
                // synthesized paths always carry their origin
                PathOrigin::Unknown => {}
            }
            jacobian.push(j);
        }
        Ok(MapEvaluation { dists, jacobian })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Bounds, Scatterer};

    #[test]
    fn jacobian_matches_finite_differences() {
        let env = Environment::new(
            Point2::new(50.0, 0.0),
            vec![
                Scatterer {
                    position: Point2::new(20.0, 70.0),
                    reflectivity: 0.8,
                },
                Scatterer {
                    position: Point2::new(80.0, 40.0),
                    reflectivity: 0.5,
                },
            ],
            Bounds::new(100.0, 100.0).unwrap(),
            false,
        )
        .unwrap();
        let map = GeometricMap::new(env, 3, 1e-4, 1e-18).unwrap();
        let x = Point2::new(43.0, 55.0);
        let e = map.evaluate(x).unwrap();
        let h = 1e-5;
        for d in 0..2 {
            let (mut p, mut m) = (x, x);
            if d == 0 {
                p.x += h;
                m.x -= h;
            } else {
                p.y += h;
                m.y -= h;
            }
            let (fp, fm) = (map.predict(p).unwrap(), map.predict(m).unwrap());
            for k in 0..3 {
                let fd_t = (fp[k].mu_theta - fm[k].mu_theta) / (2.0 * h);
                let fd_d = (fp[k].mu_tau - fm[k].mu_tau) / (2.0 * h);
                assert!((fd_t - e.jacobian[k].mu_theta[d]).abs() < 1e-8);
                assert!((fd_d - e.jacobian[k].mu_tau[d]).abs() < 1e-15);
            }
        }
    }
}
