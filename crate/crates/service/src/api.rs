//! Wire types of the HTTP API and request validation.

use eqgan::heatmap::{Coord2D, DEFAULT_COUNTS, LEVEL_RESOLUTIONS};
use serde::{Deserialize, Serialize};

/// Centers may sit slightly outside the frame so handles can be dragged
/// past the edges.
pub const COORD_BOUND: f64 = 1.25;

/// Largest seed handed out by `/reset`: integers above 2^53 do not survive
/// a round trip through a JavaScript number.
pub const MAX_RESET_SEED: u64 = (1 << 53) - 1;

/// A center in normalized coordinates: `-1` is the first pixel row/column,
/// `+1` the last.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub y: f64,
    pub x: f64,
}

impl From<Coord2D> for Center {
    fn from(c: Coord2D) -> Center {
        let n = c.to_normalized();
        Center { y: n.y, x: n.x }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub seed: u64,
    /// One list per level: 1, 2 and 4 centers.
    pub centers: Vec<Vec<Center>>,
    #[serde(default)]
    pub include_overlays: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub base_res: usize,
    pub channels: usize,
    pub levels: usize,
    pub level_resolutions: Vec<usize>,
    pub counts: Vec<usize>,
    pub var0: f64,
    pub coord_bound: f64,
    pub conditioning: String,
    pub step: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub seed: u64,
    /// The centers actually rendered, after clamping.
    pub centers: Vec<Vec<Center>>,
    /// Base64 PNG of the generated image.
    pub image: String,
    /// Base64 PNG per level: the clipped sum of that level's bumps.
    pub heatmaps: Vec<String>,
    /// Base64 PNG per level: discriminator attention over the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attn: Option<Vec<String>>,
    pub checkpoint_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetResponse {
    pub seed: u64,
    pub centers: Vec<Vec<Center>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// Offending request field, when one can be named.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

/// A request that failed validation.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn field_error(field: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError { field: field.into(), message: message.into() }
}

/// Checks the center counts against the 1/2/4 schedule and clamps every
/// coordinate to `[-COORD_BOUND, COORD_BOUND]`.
pub fn validate_centers(centers: &[Vec<Center>]) -> Result<Vec<Vec<Coord2D>>, FieldError> {
    if centers.len() != LEVEL_RESOLUTIONS.len() {
        return Err(field_error(
            "centers",
            format!("expected {} levels, got {}", LEVEL_RESOLUTIONS.len(), centers.len()),
        ));
    }
    centers
        .iter()
        .enumerate()
        .map(|(l, level)| {
            if level.len() != DEFAULT_COUNTS[l] {
                return Err(field_error(
                    format!("centers[{l}]"),
                    format!("level {l} takes {} centers, got {}", DEFAULT_COUNTS[l], level.len()),
                ));
            }
            level
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    for (axis, v) in [("y", c.y), ("x", c.x)] {
                        if !v.is_finite() {
                            return Err(field_error(format!("centers[{l}][{i}].{axis}"), "not a finite number"));
                        }
                    }
                    Ok(Coord2D::normalized(c.y.clamp(-COORD_BOUND, COORD_BOUND), c.x.clamp(-COORD_BOUND, COORD_BOUND)))
                })
                .collect()
        })
        .collect()
}

/// Parses a request body, naming the offending field when serde can.
pub fn parse_request(body: &[u8]) -> Result<EditRequest, FieldError> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| field_error("body", format!("invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| field_error("body", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "seed" | "centers" | "include_overlays") {
            return Err(field_error(key.clone(), "unknown field"));
        }
    }
    match obj.get("seed") {
        Some(s) if s.as_u64().is_some() => {}
        Some(_) => return Err(field_error("seed", "expected a non-negative integer")),
        None => return Err(field_error("seed", "missing")),
    }
    if obj.get("centers").is_none() {
        return Err(field_error("centers", "missing"));
    }
    if let Some(v) = obj.get("include_overlays") {
        if !v.is_boolean() {
            return Err(field_error("include_overlays", "expected a boolean"));
        }
    }
    let centers = &obj["centers"];
    let levels = centers.as_array().ok_or_else(|| field_error("centers", "expected a list of levels"))?;
    for (l, level) in levels.iter().enumerate() {
        let items = level.as_array().ok_or_else(|| field_error(format!("centers[{l}]"), "expected a list of centers"))?;
        for (i, c) in items.iter().enumerate() {
            for axis in ["y", "x"] {
                if !c.get(axis).is_some_and(|v| v.is_number()) {
                    return Err(field_error(format!("centers[{l}][{i}].{axis}"), "expected a number"));
                }
            }
        }
    }
    serde_json::from_value(value).map_err(|e| field_error("body", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centers(counts: [usize; 3]) -> Vec<Vec<Center>> {
        counts.iter().map(|&n| vec![Center { y: 0.0, x: 0.0 }; n]).collect()
    }

    #[test]
    fn counts_follow_the_schedule() {
        assert!(validate_centers(&centers([1, 2, 4])).is_ok());
        let err = validate_centers(&centers([1, 3, 4])).unwrap_err();
        assert_eq!(err.field, "centers[1]");
        assert_eq!(validate_centers(&centers([1, 2, 4])[..2]).unwrap_err().field, "centers");
    }

    #[test]
    fn coordinates_are_clamped() {
        let mut c = centers([1, 2, 4]);
        c[2][3] = Center { y: -7.0, x: 1.1 };
        let v = validate_centers(&c).unwrap();
        assert_eq!((v[2][3].y, v[2][3].x), (-COORD_BOUND, 1.1));
    }

    #[test]
    fn parse_names_bad_fields() {
        let field = |body: &str| parse_request(body.as_bytes()).unwrap_err().field;
        assert_eq!(field("[]"), "body");
        assert_eq!(field("{\"centers\": []}"), "seed");
        assert_eq!(field("{\"seed\": -1, \"centers\": []}"), "seed");
        assert_eq!(field("{\"seed\": 1}"), "centers");
        assert_eq!(field("{\"seed\": 1, \"centers\": [[{\"y\": 0}]]}"), "centers[0][0].x");
        assert_eq!(field("{\"seed\": 1, \"centers\": [], \"bogus\": 1}"), "bogus");
        assert_eq!(field("{\"seed\": 1, \"centers\": [], \"include_overlays\": 1}"), "include_overlays");
        let ok = parse_request(b"{\"seed\": 3, \"centers\": [[{\"y\": 0.5, \"x\": -1}]]}").unwrap();
        assert_eq!(ok.seed, 3);
        assert!(!ok.include_overlays);
    }
}
