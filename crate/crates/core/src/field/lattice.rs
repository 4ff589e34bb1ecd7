use super::Vec2;

/// Read-only view of samples on a regular lattice whose node `(i, j)` sits
/// at world position `((i + ox) * dx, (j + oy) * dx)`.
///
/// Cell-centered fields use offsets `(0.5, 0.5)`; MAC u-faces `(0, 0.5)`;
/// MAC v-faces `(0.5, 0)`.
#[derive(Clone, Copy)]
pub(crate) struct Lattice<'a> {
    pub data: &'a [f64],
    pub w: usize,
    pub h: usize,
    pub ox: f64,
    pub oy: f64,
    pub dx: f64,
    /// World extent used for clamping the query point.
    pub extent: Vec2,
}

/// Bilinear stencil: base node, fractional weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub i0: usize,
    pub j0: usize,
    pub fx: f64,
    pub fy: f64,
}

impl<'a> Lattice<'a> {
    #[inline]
    pub fn node_pos(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new((i as f64 + self.ox) * self.dx, (j as f64 + self.oy) * self.dx)
    }

    #[inline]
    pub fn stencil(&self, p: Vec2) -> Stencil {
        let px = p.x.clamp(0.0, self.extent.x);
        let py = p.y.clamp(0.0, self.extent.y);
        let (i0, fx) = axis(px / self.dx - self.ox, self.w);
        let (j0, fy) = axis(py / self.dx - self.oy, self.h);
        Stencil { i0, j0, fx, fy }
    }

    #[inline]
    fn corners(&self, s: &Stencil) -> [f64; 4] {
        let i1 = (s.i0 + 1).min(self.w - 1);
        let j1 = (s.j0 + 1).min(self.h - 1);
        let r0 = s.j0 * self.w;
        let r1 = j1 * self.w;
        [self.data[r0 + s.i0], self.data[r0 + i1], self.data[r1 + s.i0], self.data[r1 + i1]]
    }

    #[inline]
    pub fn sample(&self, p: Vec2) -> f64 {
        let s = self.stencil(p);
        let [a, b, c, d] = self.corners(&s);
        let bottom = a * (1.0 - s.fx) + b * s.fx;
        let top = c * (1.0 - s.fx) + d * s.fx;
        bottom * (1.0 - s.fy) + top * s.fy
    }

    /// Sample plus the min/max of the four stencil values.
    #[inline]
    pub fn sample_with_bounds(&self, p: Vec2) -> (f64, f64, f64) {
        let s = self.stencil(p);
        let [a, b, c, d] = self.corners(&s);
        let bottom = a * (1.0 - s.fx) + b * s.fx;
        let top = c * (1.0 - s.fx) + d * s.fx;
        let v = bottom * (1.0 - s.fy) + top * s.fy;
        (v, a.min(b).min(c).min(d), a.max(b).max(c).max(d))
    }
}

/// Continuous lattice coordinate -> (base index, fraction) with the index
/// clamped so that `base + 1` stays inside `[0, n)` whenever `n >= 2`.
#[inline]
fn axis(g: f64, n: usize) -> (usize, f64) {
    if n < 2 {
        return (0, 0.0);
    }
    let g = g.clamp(0.0, (n - 1) as f64);
    let i0 = (g.floor() as usize).min(n - 2);
    (i0, g - i0 as f64)
}
