//! Axis-aligned box arithmetic.
//!
//! Boxes are corner-form `(x_min, y_min, x_max, y_max)` in pixel units.
//! Degenerate (zero-area) boxes are valid; every ratio involving a zero
//! denominator evaluates to zero instead of failing.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox<T = f64> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Builds a box from COCO-style `(x, y, width, height)`.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    /// Corners are finite and ordered.
    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max >= self.x_min
            && self.y_max >= self.y_min
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        area(self)
    }

    /// Overlapping region, `None` when the boxes do not touch.
    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_max >= x_min && y_max >= y_min).then(|| Self::new(x_min, y_min, x_max, y_max))
    }

    /// Clamps the box into `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: T, height: T) -> Self {
        let zero = T::zero();
        let cx = |v: T| v.max(zero).min(width);
        let cy = |v: T| v.max(zero).min(height);
        Self::new(cx(self.x_min), cy(self.y_min), cx(self.x_max), cy(self.y_max))
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        let c = |v: T| U::from_f64_lossy(v.to_f64_exact());
        BBox::new(c(self.x_min), c(self.y_min), c(self.x_max), c(self.y_max))
    }
}

pub fn area<T: Scalar>(b: &BBox<T>) -> T {
    let w = (b.x_max - b.x_min).max(T::zero());
    let h = (b.y_max - b.y_min).max(T::zero());
    w * h
}

pub fn intersection_area<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.intersection(b).map_or(T::zero(), |i| area(&i))
}

/// Intersection over union; zero when the union is empty.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = intersection_area(a, b);
    let union = area(a) + area(b) - inter;
    if union > T::zero() {
        (inter / union).min(T::one())
    } else {
        T::zero()
    }
}

/// Fraction of `candidate`'s own area covered by `other`.
///
/// Asymmetric: a small box inside a large one has ratio 1 against it while
/// the large box's ratio against the small one is the area ratio.
pub fn overlap_ratio<T: Scalar>(candidate: &BBox<T>, other: &BBox<T>) -> T {
    let own = area(candidate);
    if own > T::zero() {
        (intersection_area(candidate, other) / own).min(T::one())
    } else {
        T::zero()
    }
}
