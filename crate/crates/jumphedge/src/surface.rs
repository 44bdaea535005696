//! Rectangular time–price grids of values with linear interpolation.

/// Values on a uniform `(t, S)` grid, stored row-major by time level.
///
/// Interpolation is bilinear and clamps outside the grid, matching the
/// clamped-table convention used by coefficient functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2d {
    t_nodes: Vec<f64>,
    s_nodes: Vec<f64>,
    values: Vec<f64>,
}

impl Grid2d {
    pub fn new(t_nodes: Vec<f64>, s_nodes: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), t_nodes.len() * s_nodes.len());
        assert!(t_nodes.len() >= 2 && s_nodes.len() >= 2);
        Grid2d {
            t_nodes,
            s_nodes,
            values,
        }
    }

    pub fn zeros(t_nodes: Vec<f64>, s_nodes: Vec<f64>) -> Self {
        let n = t_nodes.len() * s_nodes.len();
        Grid2d::new(t_nodes, s_nodes, vec![0.0; n])
    }

    #[inline]
    pub fn t_nodes(&self) -> &[f64] {
        &self.t_nodes
    }

    #[inline]
    pub fn s_nodes(&self) -> &[f64] {
        &self.s_nodes
    }

    #[inline]
    pub fn n_time(&self) -> usize {
        self.t_nodes.len()
    }

    #[inline]
    pub fn n_space(&self) -> usize {
        self.s_nodes.len()
    }

    #[inline]
    pub fn at(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.s_nodes.len() + i]
    }

    #[inline]
    pub fn set(&mut self, j: usize, i: usize, v: f64) {
        self.values[j * self.s_nodes.len() + i] = v;
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.s_nodes.len();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.s_nodes.len();
        &mut self.values[j * n..(j + 1) * n]
    }

    fn bracket(nodes: &[f64], x: f64) -> (usize, f64) {
        let last = nodes.len() - 1;
        if x <= nodes[0] {
            return (0, 0.0);
        }
        if x >= nodes[last] {
            return (last - 1, 1.0);
        }
        let j = match nodes.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(j) => return (j.min(last - 1), if j == last { 1.0 } else { 0.0 }),
            Err(j) => j - 1,
        };
        let w = (x - nodes[j]) / (nodes[j + 1] - nodes[j]);
        (j, w)
    }

    /// Bilinear interpolation, clamped outside the grid.
    pub fn interp(&self, t: f64, s: f64) -> f64 {
        let (j, wt) = Self::bracket(&self.t_nodes, t);
        let (i, ws) = Self::bracket(&self.s_nodes, s);
        let n = self.s_nodes.len();
        let v00 = self.values[j * n + i];
        let v01 = self.values[j * n + i + 1];
        let v10 = self.values[(j + 1) * n + i];
        let v11 = self.values[(j + 1) * n + i + 1];
        let lo = v00 + ws * (v01 - v00);
        let hi = v10 + ws * (v11 - v10);
        lo + wt * (hi - lo)
    }

    /// dV/dS of the interpolated surface at `(t, s)`: slope of the bracketing
    /// S-cell, linear in `t` between the two time levels.
    pub fn interp_ds(&self, t: f64, s: f64) -> f64 {
        let (j, wt) = Self::bracket(&self.t_nodes, t);
        let (i, _) = Self::bracket(&self.s_nodes, s);
        let n = self.s_nodes.len();
        let ds = self.s_nodes[i + 1] - self.s_nodes[i];
        let lo = (self.values[j * n + i + 1] - self.values[j * n + i]) / ds;
        let hi = (self.values[(j + 1) * n + i + 1] - self.values[(j + 1) * n + i]) / ds;
        lo + wt * (hi - lo)
    }
}

/// Central differences in the interior, second-order one-sided stencils at
/// the two edges. `values` and `s_nodes` must be uniform-spaced.
pub fn d_ds(values: &[f64], ds: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3);
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * ds);
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * ds);
    }
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * ds);
    out
}

/// Central second difference in the interior; edges copy their neighbour.
pub fn d2_ds2(values: &[f64], ds: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3);
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (ds * ds);
    }
    out[0] = out[1];
    out[n - 1] = out[n - 2];
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_plane() {
        let t: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
        let s: Vec<f64> = (0..11).map(|i| i as f64 * 10.0).collect();
        let mut g = Grid2d::zeros(t.clone(), s.clone());
        for (j, &tj) in t.iter().enumerate() {
            for (i, &si) in s.iter().enumerate() {
                g.set(j, i, 2.0 + 3.0 * tj - 0.5 * si);
            }
        }
        assert!((g.interp(0.3, 47.0) - (2.0 + 0.9 - 23.5)).abs() < 1e-12);
        assert!((g.interp_ds(0.6, 33.3) + 0.5).abs() < 1e-12);
        // clamped outside
        assert!((g.interp(-1.0, -5.0) - 2.0).abs() < 1e-12);
        assert!((g.interp(9.0, 1e9) - (2.0 + 3.0 - 50.0)).abs() < 1e-12);
    }

    #[test]
    fn derivative_stencils_exact_on_quadratics() {
        let ds = 0.5;
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * ds).collect();
        let vals: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x + 3.0 * x * x).collect();
        let d1 = d_ds(&vals, ds);
        for (i, &x) in xs.iter().enumerate() {
            assert!((d1[i] - (2.0 + 6.0 * x)).abs() < 1e-12, "i={i}");
        }
        let d2 = d2_ds2(&vals, ds);
        for v in &d2 {
            assert!((v - 6.0).abs() < 1e-10);
        }
    }
}
