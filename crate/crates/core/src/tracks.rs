//! Sparse point trajectories: user strokes, oracle tracks, tracker output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

/// One point followed through every frame; `positions[0]` is the frame-1 start.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    positions: Vec<Point>,
}

impl Track {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("a track needs at least one position"));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("track positions must be finite"));
        }
        Ok(Self { positions })
    }

    pub fn start(&self) -> Point {
        self.positions[0]
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Displacement of frame `i` relative to frame 1.
    pub fn displacement(&self, i: usize) -> Point {
        self.positions[i] - self.positions[0]
    }
}

/// Tracks that all span the same `len` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    len: usize,
    tracks: Vec<Track>,
}

impl TrackSet {
    pub fn new(len: usize, tracks: Vec<Track>) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("track length must be at least 1"));
        }
        if let Some(i) = tracks.iter().position(|t| t.len() != len) {
            return Err(Error::shape(format!(
                "track {i} has {} positions, expected {len}",
                tracks[i].len()
            )));
        }
        Ok(Self { len, tracks })
    }

    pub fn frames(&self) -> usize {
        self.len
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn starts(&self) -> Vec<Point> {
        self.tracks.iter().map(Track::start).collect()
    }
}

/// Resample a polyline to `count` points equally spaced in arc length.
///
/// A zero-length polyline (a single point or repeated points) yields `count`
/// copies of its first vertex.
pub fn resample_polyline(points: &[Point], count: usize) -> Result<Vec<Point>> {
    let first = *points
        .first()
        .ok_or_else(|| Error::invalid("empty stroke"))?;
    if count == 0 {
        return Err(Error::invalid("cannot resample to zero points"));
    }
    let mut cumulative = Vec::with_capacity(points.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for w in points.windows(2) {
        total += w[0].distance(w[1]);
        cumulative.push(total);
    }
    if count == 1 || total == 0.0 {
        return Ok(vec![first; count]);
    }
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    for i in 0..count {
        let s = total * i as f64 / (count - 1) as f64;
        while seg + 2 < points.len() && cumulative[seg + 1] < s {
            seg += 1;
        }
        let (a, b) = (points[seg], points[seg + 1]);
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            ((s - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    // Pin the endpoint so accumulated rounding never overshoots the stroke.
    out[count - 1] = *points.last().unwrap();
    Ok(out)
}
