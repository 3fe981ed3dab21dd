//! Axis-aligned box arithmetic in continuous pixel coordinates.
//!
//! Boxes are stored in corner form (`x_min, y_min, x_max, y_max`). Every
//! function here is pure, so values can be shared freely across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box ({x_min}, {y_min}, {x_max}, {y_max}): min must not exceed max and coordinates must be finite")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("invalid image extent {width}x{height}: both dimensions must be positive")]
    InvalidExtent { width: f64, height: f64 },
    #[error("ground-truth box has zero area")]
    ZeroAreaGroundTruth,
    #[error("cannot enclose an empty list of boxes")]
    EmptyBoxList,
}

/// Axis-aligned box with `x_min <= x_max` and `y_min <= y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Box {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from the top-left anchored `[x, y, width, height]` form
    /// used by annotation files.
    pub fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width >= 0.0 && height >= 0.0) {
            return Err(GeometryError::InvalidBox {
                x_min: x,
                y_min: y,
                x_max: x + width,
                y_max: y + height,
            });
        }
        Self::new(x, y, x + width, y + height)
    }

    /// Box centred on `(cx, cy)` with the given dimensions.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// `[x, y, width, height]`, the on-disk form.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    /// Area of the overlap with `other`; zero when disjoint.
    pub fn intersection_area(&self, other: &Box) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clip_to(&self, extent: ImageExtent) -> Box {
        let clamp_x = |v: f64| v.clamp(0.0, extent.width());
        let clamp_y = |v: f64| v.clamp(0.0, extent.height());
        Box {
            x_min: clamp_x(self.x_min),
            y_min: clamp_y(self.y_min),
            x_max: clamp_x(self.x_max),
            y_max: clamp_y(self.y_max),
        }
    }

    pub fn within(&self, extent: ImageExtent) -> bool {
        contained_in(self, &extent.as_box())
    }
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageExtent {
    width: f64,
    height: f64,
}

impl ImageExtent {
    pub fn new(width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(GeometryError::InvalidExtent { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// The full image as a box anchored at the origin.
    pub fn as_box(&self) -> Box {
        Box {
            x_min: 0.0,
            y_min: 0.0,
            x_max: self.width,
            y_max: self.height,
        }
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &Box, b: &Box) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Fraction of `gt`'s area covered by `query`.
pub fn coverage_fraction(gt: &Box, query: &Box) -> Result<f64, GeometryError> {
    let area = gt.area();
    if area <= 0.0 {
        return Err(GeometryError::ZeroAreaGroundTruth);
    }
    Ok((gt.intersection_area(query) / area).clamp(0.0, 1.0))
}

/// Side length of the context window along one axis:
/// `beta * (1 - box/image)^beta * box`.
pub fn context_extent(box_len: f64, image_len: f64, beta: f64) -> f64 {
    let ratio = (box_len / image_len).clamp(0.0, 1.0);
    beta * (1.0 - ratio).powf(beta) * box_len
}

/// Neighbourhood searched for region members around a query box.
///
/// The window is centred on the query box centre, sized by
/// [`context_extent`] on each axis and clipped to the image. A window
/// smaller than the query box is allowed; the region then degenerates to
/// the query alone.
pub fn context_window(query: &Box, extent: ImageExtent, beta: f64) -> Box {
    let (cx, cy) = query.center();
    let w = context_extent(query.width(), extent.width(), beta);
    let h = context_extent(query.height(), extent.height(), beta);
    Box {
        x_min: cx - w / 2.0,
        y_min: cy - h / 2.0,
        x_max: cx + w / 2.0,
        y_max: cy + h / 2.0,
    }
    .clip_to(extent)
}

/// Smallest axis-aligned box containing every input box.
pub fn enclosing_box<'a, I>(boxes: I) -> Result<Box, GeometryError>
where
    I: IntoIterator<Item = &'a Box>,
{
    boxes
        .into_iter()
        .copied()
        .reduce(|acc, b| Box {
            x_min: acc.x_min.min(b.x_min),
            y_min: acc.y_min.min(b.y_min),
            x_max: acc.x_max.max(b.x_max),
            y_max: acc.y_max.max(b.y_max),
        })
        .ok_or(GeometryError::EmptyBoxList)
}

/// Closed containment: shared boundaries count as inside.
pub fn contained_in(inner: &Box, window: &Box) -> bool {
    inner.x_min >= window.x_min
        && inner.x_max <= window.x_max
        && inner.y_min >= window.y_min
        && inner.y_max <= window.y_max
}
