use serde::{Deserialize, Serialize};

use super::image::Image;
use super::resample::area_resample;
use crate::error::{Error, Result};

/// Where a glimpse is centred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    /// Normalized coordinates `(x, y)`; `(-1, -1)` is the top-left corner.
    Point([f64; 2]),
    /// Index of a cell in a discrete grid.
    Cell(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub location: Location,
    pub scale: usize,
}

impl Action {
    pub fn point(x: f64, y: f64, scale: usize) -> Self {
        Self {
            location: Location::Point([x, y]),
            scale,
        }
    }

    pub fn cell(cell: usize, scale: usize) -> Self {
        Self {
            location: Location::Cell(cell),
            scale,
        }
    }
}

/// The set of actions an environment accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ActionSpace {
    Continuous { scales: usize },
    Discrete { cells: usize, scales: usize },
}

impl ActionSpace {
    pub fn scales(&self) -> usize {
        match self {
            ActionSpace::Continuous { scales } | ActionSpace::Discrete { scales, .. } => *scales,
        }
    }

    /// Number of distinct single-step actions, if finite.
    pub fn choices(&self) -> Option<usize> {
        match self {
            ActionSpace::Continuous { .. } => None,
            ActionSpace::Discrete { cells, scales } => Some(cells * scales),
        }
    }

    /// The `index`-th discrete action, ordered cell-major.
    pub fn action_at(&self, index: usize) -> Option<Action> {
        match self {
            ActionSpace::Discrete { cells, scales } if index < cells * scales => {
                Some(Action::cell(index / scales, index % scales))
            }
            _ => None,
        }
    }

    /// Inverse of [`action_at`](Self::action_at).
    pub fn index_of(&self, action: &Action) -> Option<usize> {
        match (self, action.location) {
            (ActionSpace::Discrete { cells, scales }, Location::Cell(c)) if c < *cells && action.scale < *scales => {
                Some(c * scales + action.scale)
            }
            _ => None,
        }
    }

    pub fn validate(&self, action: &Action) -> Result<()> {
        if action.scale >= self.scales() {
            return Err(Error::domain(format!(
                "scale index {} out of range 0..{}",
                action.scale,
                self.scales()
            )));
        }
        match (self, action.location) {
            (ActionSpace::Continuous { .. }, Location::Point(p)) if p.iter().all(|v| v.is_finite()) => Ok(()),
            (ActionSpace::Discrete { cells, .. }, Location::Cell(c)) if c < *cells => Ok(()),
            _ => Err(Error::domain(format!("action {action:?} not valid for {self:?}"))),
        }
    }
}

/// Anything a glimpse policy can look at.
pub trait Environment {
    fn action_space(&self) -> ActionSpace;
    /// Coarse whole-scene input seen before the first glimpse.
    fn context(&self) -> &[f64];
    fn context_dim(&self) -> usize {
        self.context().len()
    }
    /// Observation returned by a glimpse, flattened.
    fn glimpse(&self, action: &Action) -> Vec<f64>;
    fn glimpse_dim(&self) -> usize;
}

impl<E: Environment + ?Sized> Environment for &E {
    fn action_space(&self) -> ActionSpace {
        (**self).action_space()
    }

    fn context(&self) -> &[f64] {
        (**self).context()
    }

    fn glimpse(&self, action: &Action) -> Vec<f64> {
        (**self).glimpse(action)
    }

    fn glimpse_dim(&self) -> usize {
        (**self).glimpse_dim()
    }
}

/// A glimpse patch together with the action that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GlimpseObservation {
    pub patch: Vec<f64>,
    pub retina: usize,
    pub source: Action,
}

fn window_origin(center: f64, window: usize) -> i64 {
    (center - window as f64 / 2.0).round() as i64
}

/// Crops the square window `scales[action.scale]` centred on the action and
/// area-resamples it to `retina × retina`. Pixels outside the image read as 0.
///
/// Grid-cell locations are interpreted on a `grid × grid` lattice; pass the
/// lattice side in `grid` (ignored for point locations).
pub fn extract_glimpse(
    image: &Image,
    action: &Action,
    scales: &[usize],
    retina: usize,
    grid: usize,
) -> Result<GlimpseObservation> {
    let window = *scales
        .get(action.scale)
        .ok_or_else(|| Error::domain(format!("scale index {} out of range", action.scale)))?;
    if window == 0 || retina == 0 {
        return Err(Error::config("window and retina sizes must be positive"));
    }
    let [x, y] = match action.location {
        Location::Point([x, y]) => [x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0)],
        Location::Cell(c) => {
            if grid == 0 || c >= grid * grid {
                return Err(Error::domain(format!("cell {c} outside a {grid}×{grid} grid")));
            }
            let g = grid as f64;
            [
                ((c % grid) as f64 + 0.5) / g * 2.0 - 1.0,
                ((c / grid) as f64 + 0.5) / g * 2.0 - 1.0,
            ]
        }
    };
    let cx = (x + 1.0) / 2.0 * image.width() as f64;
    let cy = (y + 1.0) / 2.0 * image.height() as f64;
    let ox = window_origin(cx, window);
    let oy = window_origin(cy, window);
    let mut crop = Vec::with_capacity(window * window);
    for r in 0..window as i64 {
        for c in 0..window as i64 {
            crop.push(image.get_padded(oy + r, ox + c));
        }
    }
    Ok(GlimpseObservation {
        patch: area_resample(&crop, window, window, retina, retina),
        retina,
        source: *action,
    })
}

/// Area-averaged `side × side` thumbnail of the whole image.
pub fn low_res_view(image: &Image, side: usize) -> Result<Vec<f64>> {
    if side == 0 || side > image.height().min(image.width()) {
        return Err(Error::config(format!(
            "low-resolution side {side} must be in 1..={}",
            image.height().min(image.width())
        )));
    }
    Ok(area_resample(image.pixels(), image.height(), image.width(), side, side))
}

/// Glimpse geometry shared by every image in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlimpseSensor {
    /// Window side, in pixels, for each scale index.
    pub scales: Vec<usize>,
    pub retina: usize,
    pub low_res_side: usize,
    /// `None` for continuous locations, `Some(g)` for a `g × g` grid.
    pub grid: Option<usize>,
}

impl GlimpseSensor {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::config("scale table must be non-empty with positive windows"));
        }
        if self.retina == 0 || self.low_res_side == 0 || self.grid == Some(0) {
            return Err(Error::config("retina, low-res side and grid must be positive"));
        }
        Ok(())
    }

    pub fn action_space(&self) -> ActionSpace {
        match self.grid {
            None => ActionSpace::Continuous {
                scales: self.scales.len(),
            },
            Some(g) => ActionSpace::Discrete {
                cells: g * g,
                scales: self.scales.len(),
            },
        }
    }

    pub fn env<'a>(&'a self, image: &'a Image) -> Result<ImageEnv<'a>> {
        Ok(ImageEnv {
            image,
            sensor: self,
            context: low_res_view(image, self.low_res_side)?,
        })
    }
}

/// An image viewed through a [`GlimpseSensor`].
#[derive(Debug, Clone)]
pub struct ImageEnv<'a> {
    image: &'a Image,
    sensor: &'a GlimpseSensor,
    context: Vec<f64>,
}

impl ImageEnv<'_> {
    pub fn image(&self) -> &Image {
        self.image
    }

    pub fn observe(&self, action: &Action) -> Result<GlimpseObservation> {
        extract_glimpse(
            self.image,
            action,
            &self.sensor.scales,
            self.sensor.retina,
            self.sensor.grid.unwrap_or(0),
        )
    }
}

impl Environment for ImageEnv<'_> {
    fn action_space(&self) -> ActionSpace {
        self.sensor.action_space()
    }

    fn context(&self) -> &[f64] {
        &self.context
    }

    fn glimpse(&self, action: &Action) -> Vec<f64> {
        // Actions reaching here come from the policy heads, which only emit
        // valid scale and cell indices.
        self.observe(action)
            .map(|o| o.patch)
            .unwrap_or_else(|_| vec![0.0; self.glimpse_dim()])
    }

    fn glimpse_dim(&self) -> usize {
        self.sensor.retina * self.sensor.retina
    }
}
