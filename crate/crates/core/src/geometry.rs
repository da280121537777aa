//! Screen-space rectangles.
//!
//! Coordinates follow the usual UI convention: the origin is the top-left
//! corner of the screen, `x` grows rightwards and `y` grows downwards. A
//! rectangle is the half-open region `[left, right) x [top, bottom)`, so two
//! rectangles that merely share an edge have an empty intersection.

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in screen pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Rect {
    pub fn new(left: i32, top: i32, right: i32, bottom: i32) -> Self {
        Rect { left, top, right, bottom }
    }

    pub fn width(&self) -> i32 {
        (self.right - self.left).max(0)
    }

    pub fn height(&self) -> i32 {
        (self.bottom - self.top).max(0)
    }

    /// Area in square pixels. Degenerate (inverted or zero-extent)
    /// rectangles have area zero.
    pub fn area(&self) -> i64 {
        i64::from(self.width()) * i64::from(self.height())
    }

    /// True when the rectangle encloses a non-empty region.
    pub fn is_nonempty(&self) -> bool {
        self.right > self.left && self.bottom > self.top
    }

    /// Intersection with positive area, if any. Rectangles that only touch
    /// along an edge or at a corner do not intersect.
    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let left = self.left.max(other.left);
        let top = self.top.max(other.top);
        let right = self.right.min(other.right);
        let bottom = self.bottom.min(other.bottom);
        if right > left && bottom > top {
            Some(Rect { left, top, right, bottom })
        } else {
            None
        }
    }

    /// True when `other` lies entirely within this rectangle. Boundaries may
    /// coincide: every rectangle contains itself.
    pub fn contains(&self, other: &Rect) -> bool {
        self.left <= other.left
            && self.top <= other.top
            && self.right >= other.right
            && self.bottom >= other.bottom
    }
}

impl std::fmt::Display for Rect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{},{}][{},{}]", self.left, self.top, self.right, self.bottom)
    }
}
