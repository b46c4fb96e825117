//! Gauss–Legendre quadrature nodes and weights on [-1, 1].

/// Nodes and weights of the n-point Gauss–Legendre rule, exact for
/// polynomials up to degree 2n-1. Nodes are the roots of the n-th Legendre
/// polynomial, found by Newton iteration from the Chebyshev-like initial
/// guesses; weights are 2 / ((1 - x^2) P_n'(x)^2).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Roots come in +/- pairs; solve for the non-negative half.
    let half = n.div_ceil(2);
    // Value and derivative of P_n via the recurrence
    // (j+1) P_{j+1} = (2j+1) x P_j - j P_{j-1}.
    let eval = |x: f64| -> (f64, f64) {
        let mut p0 = 1.0;
        let mut p1 = x;
        for j in 1..n {
            let p2 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p0) / (j + 1) as f64;
            p0 = p1;
            p1 = p2;
        }
        let (p, pm1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
        (p, n as f64 * (x * p - pm1) / (x * x - 1.0))
    };
    for i in 0..half {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = eval(x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = eval(x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Integral of `f` over [lo, hi] with the n-point rule.
pub fn integrate(n: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let mid = 0.5 * (lo + hi);
    let scale = 0.5 * (hi - lo);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| w * f(mid + scale * x))
        .sum::<f64>()
        * scale
}
