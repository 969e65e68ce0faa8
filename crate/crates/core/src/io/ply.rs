//! Binary little-endian PLY codec for Gaussian splat scenes.
//!
//! Vertex layout (all `float`):
//!
//! ```text
//! x y z
//! f_dc_0 .. f_dc_{K-1}                       band-0 coefficient per channel
//! f_rest_0 .. f_rest_{K((L+1)²-1)-1}         channel-major higher bands
//! opacity                                    logit
//! scale_0 scale_1 scale_2                    log scale
//! rot_0 rot_1 rot_2 rot_3                    quaternion (w, x, y, z)
//! ```
//!
//! Other `float`/`double` vertex properties (e.g. normals) are skipped on
//! read. Quaternions are renormalized only when their norm is off by more
//! than the scene tolerance, so files written here read back unchanged.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::scene::GaussianScene;
use crate::sh::MAX_SH_ORDER;

#[derive(Debug, Error, PartialEq)]
pub enum PlyError {
    #[error("malformed PLY header at byte {offset}: {message}")]
    MalformedHeader { offset: usize, message: String },

    #[error("PLY property {property}: {message}")]
    Property { property: String, message: String },

    #[error("truncated PLY payload at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("scene cannot be encoded: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    F32,
    F64,
}

impl Scalar {
    fn size(self) -> usize {
        match self {
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Debug)]
struct Header {
    vertex_count: usize,
    /// Property name, type, byte offset within a vertex row.
    properties: Vec<(String, Scalar, usize)>,
    row_size: usize,
    body_offset: usize,
}

fn malformed(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::MalformedHeader {
        offset,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let mut lines = Vec::new();
    loop {
        let Some(len) = bytes[offset..].iter().position(|b| *b == b'\n') else {
            return Err(malformed(offset, "missing end_header"));
        };
        let raw = &bytes[offset..offset + len];
        let line = std::str::from_utf8(raw)
            .map_err(|_| malformed(offset, "header is not valid UTF-8"))?
            .trim_end_matches('\r');
        lines.push((offset, line));
        offset += len + 1;
        if line == "end_header" {
            break;
        }
    }

    let mut iter = lines.into_iter();
    match iter.next() {
        Some((_, "ply")) => {}
        other => {
            let at = other.map_or(0, |(at, _)| at);
            return Err(malformed(at, "file does not start with 'ply'"));
        }
    }
    let mut format_seen = false;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut properties = Vec::new();
    let mut row_size = 0;
    for (at, line) in iter {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", fmt, version] => {
                if *fmt != "binary_little_endian" {
                    return Err(malformed(at, format!("unsupported format {fmt}")));
                }
                if *version != "1.0" {
                    return Err(malformed(at, format!("unsupported version {version}")));
                }
                format_seen = true;
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| malformed(at, format!("bad element count {count:?}")))?;
                if *name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(malformed(at, "duplicate vertex element"));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else if count > 0 {
                    return Err(malformed(at, format!("unsupported element {name}")));
                } else {
                    in_vertex = false;
                }
            }
            ["property", "list", ..] => {
                return Err(malformed(at, "list properties are not supported"));
            }
            ["property", ty, name] => {
                if !in_vertex {
                    return Err(malformed(at, format!("property {name} outside vertex element")));
                }
                let scalar = match *ty {
                    "float" | "float32" => Scalar::F32,
                    "double" | "float64" => Scalar::F64,
                    other => {
                        return Err(PlyError::Property {
                            property: name.to_string(),
                            message: format!("unsupported type {other}"),
                        })
                    }
                };
                if properties.iter().any(|(n, _, _)| n == name) {
                    return Err(PlyError::Property {
                        property: name.to_string(),
                        message: "declared twice".into(),
                    });
                }
                properties.push((name.to_string(), scalar, row_size));
                row_size += scalar.size();
            }
            _ => return Err(malformed(at, format!("unrecognized header line {line:?}"))),
        }
    }
    if !format_seen {
        return Err(malformed(0, "missing format line"));
    }
    let vertex_count = vertex_count.ok_or_else(|| malformed(0, "missing vertex element"))?;
    Ok(Header {
        vertex_count,
        properties,
        row_size,
        body_offset: offset,
    })
}

/// Resolves `prefix0..prefixN` into row offsets, requiring contiguous
/// indices. Returns an empty list when none are declared.
fn indexed(
    lookup: &HashMap<&str, (Scalar, usize)>,
    header: &Header,
    prefix: &str,
) -> Result<Vec<(Scalar, usize)>, PlyError> {
    let count = header
        .properties
        .iter()
        .filter(|(n, _, _)| {
            n.strip_prefix(prefix)
                .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
        })
        .count();
    (0..count)
        .map(|i| {
            let name = format!("{prefix}{i}");
            lookup.get(name.as_str()).copied().ok_or(PlyError::Property {
                property: name,
                message: format!("{prefix}* indices must be contiguous from 0"),
            })
        })
        .collect()
}

fn exact_count(
    found: Vec<(Scalar, usize)>,
    prefix: &str,
    expected: usize,
) -> Result<Vec<(Scalar, usize)>, PlyError> {
    if found.len() != expected {
        return Err(PlyError::Property {
            property: format!("{prefix}*"),
            message: format!("expected {expected} properties, found {}", found.len()),
        });
    }
    Ok(found)
}

#[inline]
fn read_scalar(row: &[u8], (ty, at): (Scalar, usize)) -> f64 {
    match ty {
        Scalar::F32 => f32::from_le_bytes(row[at..at + 4].try_into().unwrap()) as f64,
        Scalar::F64 => f64::from_le_bytes(row[at..at + 8].try_into().unwrap()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Decodes a scene from PLY bytes.
pub fn decode_ply(bytes: &[u8]) -> Result<GaussianScene, PlyError> {
    let header = parse_header(bytes)?;
    let lookup: HashMap<&str, (Scalar, usize)> = header
        .properties
        .iter()
        .map(|(n, t, o)| (n.as_str(), (*t, *o)))
        .collect();
    let single = |name: &str| {
        lookup.get(name).copied().ok_or_else(|| PlyError::Property {
            property: name.to_string(),
            message: "missing".into(),
        })
    };
    let [x, y, z, opacity] = [single("x")?, single("y")?, single("z")?, single("opacity")?];
    let dc = indexed(&lookup, &header, "f_dc_")?;
    let rest = indexed(&lookup, &header, "f_rest_")?;
    let scale = exact_count(indexed(&lookup, &header, "scale_")?, "scale_", 3)?;
    let rot = exact_count(indexed(&lookup, &header, "rot_")?, "rot_", 4)?;

    let channels = dc.len();
    if channels == 0 {
        return Err(PlyError::Property {
            property: "f_dc_0".into(),
            message: "missing".into(),
        });
    }
    if rest.len() % channels != 0 {
        return Err(PlyError::Property {
            property: "f_rest_*".into(),
            message: format!("{} values do not split over {channels} channels", rest.len()),
        });
    }
    let per = rest.len() / channels + 1;
    let sh_order = (per as f64).sqrt() as usize - 1;
    if (sh_order + 1) * (sh_order + 1) != per || sh_order > MAX_SH_ORDER {
        return Err(PlyError::Property {
            property: "f_rest_*".into(),
            message: format!("{per} coefficients per channel is not (L+1)² for L <= {MAX_SH_ORDER}"),
        });
    }

    let n = header.vertex_count;
    let expected = n * header.row_size;
    let body = &bytes[header.body_offset..];
    if body.len() < expected {
        return Err(PlyError::Truncated {
            offset: header.body_offset + body.len(),
            expected,
            found: body.len(),
        });
    }

    let mut scene = GaussianScene::empty(sh_order, channels);
    scene.sh_coeffs.reserve(n * channels * per);
    for row in body[..expected].chunks_exact(header.row_size.max(1)).take(n) {
        scene
            .means
            .push(Vector3::new(read_scalar(row, x), read_scalar(row, y), read_scalar(row, z)));
        scene.opacities.push(sigmoid(read_scalar(row, opacity)));
        scene.scales.push(Vector3::from_fn(|i, _| read_scalar(row, scale[i]).exp()));
        let q = Quaternion::new(
            read_scalar(row, rot[0]),
            read_scalar(row, rot[1]),
            read_scalar(row, rot[2]),
            read_scalar(row, rot[3]),
        );
        let norm = q.norm();
        scene
            .rotations
            .push(if (norm - 1.0).abs() > 1e-6 && norm > 0.0 { q / norm } else { q });
        for k in 0..channels {
            scene.sh_coeffs.push(read_scalar(row, dc[k]));
            for m in 1..per {
                scene
                    .sh_coeffs
                    .push(read_scalar(row, rest[k * (per - 1) + m - 1]));
            }
        }
    }
    Ok(scene)
}

/// Encodes a scene as binary little-endian PLY with `float` properties.
pub fn encode_ply(scene: &GaussianScene) -> Result<Vec<u8>, PlyError> {
    let violations = scene.validate();
    if let Some(v) = violations.first() {
        return Err(PlyError::InvalidScene(v.to_string()));
    }
    if scene.sh_order > MAX_SH_ORDER {
        return Err(PlyError::InvalidScene(format!("SH order {}", scene.sh_order)));
    }
    let k = scene.channels;
    let per = scene.coeffs_per_channel();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", scene.len());
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..k).map(|i| format!("f_dc_{i}")));
    names.extend((0..k * (per - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    for name in &names {
        let _ = writeln!(header, "property float {name}");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    out.reserve(scene.len() * names.len() * 4);
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for i in 0..scene.len() {
        let mean = scene.means[i];
        put(mean.x);
        put(mean.y);
        put(mean.z);
        let coeffs = scene.coeffs(i);
        for c in 0..k {
            put(coeffs[c * per]);
        }
        for c in 0..k {
            for m in 1..per {
                put(coeffs[c * per + m]);
            }
        }
        put(logit(scene.opacities[i]));
        for s in scene.scales[i].iter() {
            put(s.ln());
        }
        let q = scene.rotations[i];
        for v in [q.w, q.i, q.j, q.k] {
            put(v);
        }
    }
    Ok(out)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_ply(&bytes)?)
}

pub fn write_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(scene)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(props: &[&str], n: usize) -> Vec<u8> {
        let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
        for p in props {
            h.push_str(&format!("property float {p}\n"));
        }
        h.push_str("end_header\n");
        h.into_bytes()
    }

    const BASE: [&str; 12] = [
        "x", "y", "z", "f_dc_0", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
        "rot_2", "rot_3",
    ];

    fn row(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn logit_zero_reads_as_half() {
        let mut bytes = header(&BASE, 1);
        bytes.extend(row(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        let scene = decode_ply(&bytes).unwrap();
        assert_eq!(scene.opacities, vec![0.5]);
        assert_eq!(scene.scales[0], Vector3::new(1.0, 1.0, 1.0));
        assert_eq!((scene.sh_order, scene.channels), (0, 1));
    }

    #[test]
    fn wrong_rotation_count_names_property() {
        let mut props = BASE.to_vec();
        props.push("rot_4");
        let bytes = header(&props, 0);
        let err = decode_ply(&bytes).unwrap_err();
        match err {
            PlyError::Property { property, .. } => assert_eq!(property, "rot_*"),
            other => panic!("unexpected {other:?}"),
        }
        let props: Vec<&str> = BASE.iter().copied().filter(|p| *p != "rot_3").collect();
        assert!(matches!(
            decode_ply(&header(&props, 0)),
            Err(PlyError::Property { property, .. }) if property == "rot_*"
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = header(&BASE, 2);
        let body_at = bytes.len();
        bytes.extend(row(&[0.0; 12]));
        match decode_ply(&bytes).unwrap_err() {
            PlyError::Truncated {
                offset,
                expected,
                found,
            } => {
                assert_eq!(offset, body_at + 48);
                assert_eq!(expected, 96);
                assert_eq!(found, 48);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            decode_ply(b"plx\nend_header\n"),
            Err(PlyError::MalformedHeader { offset: 0, .. })
        ));
        assert!(matches!(
            decode_ply(b"ply\nformat ascii 1.0\nend_header\n"),
            Err(PlyError::MalformedHeader { offset: 4, .. })
        ));
        assert!(matches!(
            decode_ply(b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"),
            Err(PlyError::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode_ply(b"ply\nformat binary_little_endian 1.0\nelement vertex x\nend_header\n"),
            Err(PlyError::MalformedHeader { offset: 36, .. })
        ));
    }

    #[test]
    fn non_square_rest_count_is_rejected() {
        let mut props = BASE.to_vec();
        props.extend(["f_rest_0", "f_rest_1"]);
        assert!(matches!(
            decode_ply(&header(&props, 0)),
            Err(PlyError::Property { property, .. }) if property == "f_rest_*"
        ));
    }

    #[test]
    fn extra_float_properties_are_skipped() {
        let mut props = vec!["x", "y", "z", "nx", "ny", "nz"];
        props.extend(&BASE[3..]);
        let mut bytes = header(&props, 1);
        bytes.extend(row(&[
            1.0, 2.0, 3.0, 9.0, 9.0, 9.0, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        ]));
        let scene = decode_ply(&bytes).unwrap();
        assert_eq!(scene.means[0], Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(scene.sh_coeffs, vec![0.5]);
    }

    #[test]
    fn invalid_scene_is_not_encoded() {
        let mut scene = GaussianScene::new(
            vec![Vector3::zeros()],
            vec![Vector3::repeat(1.0)],
            vec![Quaternion::identity()],
            vec![0.5],
            0,
            1,
        )
        .unwrap();
        scene.opacities[0] = 2.0;
        assert!(matches!(encode_ply(&scene), Err(PlyError::InvalidScene(_))));
    }
}
