//! DoI discretization and the transceiver ring.
//!
//! Images are stored row-major with row 0 at the top (largest `y`) and
//! column 0 at the left (smallest `x`), so cell `n = row * nx + col`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Hasher;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Uniform rectangular grid over a DoI centered at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoIGrid {
    pub size_x: f64,
    pub size_y: f64,
    pub nx: usize,
    pub ny: usize,
}

impl DoIGrid {
    pub fn new(size_x: f64, size_y: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(size_x > 0.0 && size_y > 0.0 && size_x.is_finite() && size_y.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "DoI extent must be positive, got {size_x}×{size_y}"
            )));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidConfig("DoI grid needs at least one cell".into()));
        }
        Ok(Self {
            size_x,
            size_y,
            nx,
            ny,
        })
    }

    pub fn square(size: f64, n: usize) -> Result<Self> {
        Self::new(size, size, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_width(&self) -> f64 {
        self.size_x / self.nx as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.size_y / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_width() * self.cell_height()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.nx + col
    }

    pub fn row_col(&self, n: usize) -> (usize, usize) {
        (n / self.nx, n % self.nx)
    }

    pub fn center_rc(&self, row: usize, col: usize) -> Point {
        Point::new(
            -0.5 * self.size_x + (col as f64 + 0.5) * self.cell_width(),
            0.5 * self.size_y - (row as f64 + 0.5) * self.cell_height(),
        )
    }

    pub fn center(&self, n: usize) -> Point {
        let (row, col) = self.row_col(n);
        self.center_rc(row, col)
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len()).map(|n| self.center(n)).collect()
    }

    /// Strictly inside the DoI rectangle.
    pub fn contains(&self, p: &Point) -> bool {
        p.x.abs() < 0.5 * self.size_x && p.y.abs() < 0.5 * self.size_y
    }

    pub fn hash(&self) -> String {
        Hasher::new()
            .f64(self.size_x)
            .f64(self.size_y)
            .u64(self.nx as u64)
            .u64(self.ny as u64)
            .finish()
    }
}

/// One transmitter → receiver pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub tx: usize,
    pub rx: usize,
}

/// Transceiver nodes on a square ring and the unique links between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    pub side: f64,
    pub nodes: Vec<Point>,
    pub links: Vec<Link>,
}

impl SensorLayout {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Nodes that transmit on at least one link, in order.
    pub fn transmitters(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.links.iter().map(|l| l.tx).collect();
        out.dedup();
        out
    }

    pub fn hash(&self) -> String {
        let mut h = Hasher::new();
        h.f64(self.side).u64(self.nodes.len() as u64);
        for p in &self.nodes {
            h.f64(p.x).f64(p.y);
        }
        for l in &self.links {
            h.u64(l.tx as u64).u64(l.rx as u64);
        }
        h.finish()
    }
}

/// Places `node_count` nodes equally spaced along the perimeter of a square of
/// side `side` (counter-clockwise from the bottom-left corner) and enumerates
/// links as (0,1), (0,2), …, (0,M−1), (1,2), …, (M−2,M−1).
pub fn make_layout(node_count: usize, side: f64, doi: &DoIGrid) -> Result<SensorLayout> {
    if node_count < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 nodes, got {node_count}"
        )));
    }
    if !(side > doi.size_x && side > doi.size_y) {
        return Err(Error::InvalidConfig(format!(
            "node square side {side} m must exceed the DoI extent {}×{} m",
            doi.size_x, doi.size_y
        )));
    }
    let half = 0.5 * side;
    let nodes: Vec<Point> = (0..node_count)
        .map(|i| {
            let s = 4.0 * side * i as f64 / node_count as f64;
            let (edge, t) = ((s / side).floor() as usize, s % side);
            match edge {
                0 => Point::new(-half + t, -half),
                1 => Point::new(half, -half + t),
                2 => Point::new(half - t, half),
                _ => Point::new(-half, half - t),
            }
        })
        .collect();
    let links = (0..node_count)
        .flat_map(|tx| (tx + 1..node_count).map(move |rx| Link { tx, rx }))
        .collect();
    Ok(SensorLayout { side, nodes, links })
}
