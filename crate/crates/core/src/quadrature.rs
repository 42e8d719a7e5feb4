//! Composite Gauss-Legendre rules on intervals with prescribed breakpoints.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A 1-D composite rule: every sub-interval between consecutive breakpoints
/// is split into `panels` equal panels carrying an `order`-point rule.
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn composite(breaks: &[f64], panels: usize, order: usize) -> Self {
        let (gx, gw) = gauss_legendre(order);
        let mut b: Vec<f64> = breaks.to_vec();
        b.sort_by(|x, y| x.total_cmp(y));
        b.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (1.0 + y.abs()));
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for seg in b.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            let width = (hi - lo) / panels as f64;
            for p in 0..panels {
                let a = lo + p as f64 * width;
                for (x, w) in gx.iter().zip(&gw) {
                    nodes.push(a + 0.5 * width * (x + 1.0));
                    weights.push(0.5 * width * w);
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}: {q} vs {exact}");
            }
        }
    }

    #[test]
    fn composite_handles_kinks_at_breakpoints() {
        let r = Rule1d::composite(&[-1.0, 0.0, 1.0], 2, 4);
        assert!((r.integrate(|x| x.abs()) - 1.0).abs() < 1e-14);
        let smooth = Rule1d::composite(&[0.0, std::f64::consts::PI], 8, 8);
        assert!((smooth.integrate(f64::sin) - 2.0).abs() < 1e-13);
    }
}
