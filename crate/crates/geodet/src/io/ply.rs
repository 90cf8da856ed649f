//! PLY reading and writing for the subset this project uses: a `vertex`
//! element with float32 `x y z` and optional uint8 `red green blue`, in
//! ASCII or binary little-endian form.
//!
//! Parsers return structured errors for any malformed input; they never
//! panic, whatever the bytes.

use crate::error::{Error, Result};
use crate::types::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    vertex_count: usize,
    has_color: bool,
    /// Byte offset where the body starts.
    body_start: usize,
    /// 1-based line number just past `end_header`, for error reporting.
    body_line: usize,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads one header line (terminated by `\n`, optional `\r`) as UTF-8.
fn read_line(bytes: &[u8], pos: &mut usize, line_no: usize) -> Result<String> {
    if *pos >= bytes.len() {
        return Err(parse_err(line_no, "unexpected end of header"));
    }
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n');
    let (raw, advance) = match end {
        Some(e) => (&rest[..e], e + 1),
        None => (rest, rest.len()),
    };
    *pos += advance;
    let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
    String::from_utf8(raw.to_vec())
        .map_err(|_| parse_err(line_no, "header line is not valid UTF-8"))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut line_no = 0usize;

    line_no += 1;
    let magic = read_line(bytes, &mut pos, line_no)?;
    if magic.trim() != "ply" {
        return Err(parse_err(line_no, format!("expected 'ply' magic, got '{magic}'")));
    }

    let mut format = None;
    let mut vertex_count: Option<usize> = None;
    // Property order within the vertex element, for strict layout checking.
    let mut vertex_props: Vec<String> = Vec::new();
    let mut in_vertex_element = false;

    loop {
        line_no += 1;
        let line = read_line(bytes, &mut pos, line_no)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or("");
        match keyword {
            "comment" | "obj_info" => {}
            "format" => {
                let kind = tokens.next().unwrap_or("");
                let version = tokens.next().unwrap_or("");
                if version != "1.0" {
                    return Err(parse_err(line_no, format!("unsupported PLY version '{version}'")));
                }
                format = Some(match kind {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => {
                        return Err(parse_err(
                            line_no,
                            format!("unsupported format '{other}' (ascii or binary_little_endian)"),
                        ))
                    }
                });
            }
            "element" => {
                let name = tokens.next().unwrap_or("");
                let count = tokens.next().unwrap_or("");
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(parse_err(line_no, "duplicate vertex element"));
                    }
                    let n: usize = count
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad vertex count '{count}'")))?;
                    vertex_count = Some(n);
                    in_vertex_element = true;
                } else {
                    // Other elements are only tolerated if empty; this reader
                    // handles pure point data.
                    let n: usize = count
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad element count '{count}'")))?;
                    if n != 0 {
                        return Err(parse_err(
                            line_no,
                            format!("unsupported element '{name}' with {n} entries"),
                        ));
                    }
                    in_vertex_element = false;
                }
            }
            "property" => {
                if !in_vertex_element {
                    continue;
                }
                let ty = tokens.next().unwrap_or("");
                let name = tokens.next().unwrap_or("");
                let expected_ty = match name {
                    "x" | "y" | "z" => "float",
                    "red" | "green" | "blue" => "uchar",
                    other => {
                        return Err(parse_err(
                            line_no,
                            format!("unsupported vertex property '{other}'"),
                        ))
                    }
                };
                let ty_ok = match expected_ty {
                    "float" => ty == "float" || ty == "float32",
                    "uchar" => ty == "uchar" || ty == "uint8",
                    _ => false,
                };
                if !ty_ok {
                    return Err(parse_err(
                        line_no,
                        format!("property '{name}' must be {expected_ty}, got '{ty}'"),
                    ));
                }
                vertex_props.push(name.to_string());
            }
            "end_header" => break,
            other => {
                return Err(parse_err(line_no, format!("unknown header keyword '{other}'")));
            }
        }
    }

    let format = format.ok_or_else(|| parse_err(line_no, "missing 'format' line"))?;
    let vertex_count =
        vertex_count.ok_or_else(|| parse_err(line_no, "missing 'element vertex' line"))?;

    let has_color = match vertex_props
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "red", "green", "blue"] => true,
        other => {
            return Err(parse_err(
                line_no,
                format!("vertex properties must be x y z [red green blue], got {other:?}"),
            ))
        }
    };

    Ok(Header {
        format,
        vertex_count,
        has_color,
        body_start: pos,
        body_line: line_no + 1,
    })
}

/// Parse a PLY byte buffer into a point cloud. Missing color properties
/// default every color to mid-gray (0.5); 8-bit colors are divided by 255.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    if header.vertex_count == 0 {
        return Err(parse_err(header.body_line, "vertex count is zero"));
    }

    // Guard preallocation against absurd declared counts.
    let prealloc = header.vertex_count.min(1 << 20);
    let mut positions: Vec<[f32; 3]> = Vec::with_capacity(prealloc);
    let mut colors: Vec<[f32; 3]> = Vec::with_capacity(prealloc);

    match header.format {
        PlyFormat::Ascii => {
            let body = &bytes[header.body_start..];
            let body = std::str::from_utf8(body)
                .map_err(|_| parse_err(header.body_line, "ASCII body is not valid UTF-8"))?;
            let mut line_no = header.body_line - 1;
            for line in body.lines() {
                line_no += 1;
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                if positions.len() == header.vertex_count {
                    // Trailing garbage after the declared vertices.
                    return Err(parse_err(line_no, "data beyond declared vertex count"));
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                let want = if header.has_color { 6 } else { 3 };
                if fields.len() != want {
                    return Err(parse_err(
                        line_no,
                        format!("expected {want} fields, got {}", fields.len()),
                    ));
                }
                let mut pos = [0f32; 3];
                for (k, slot) in pos.iter_mut().enumerate() {
                    *slot = fields[k].parse::<f32>().map_err(|_| {
                        parse_err(line_no, format!("bad float '{}'", fields[k]))
                    })?;
                }
                let col = if header.has_color {
                    let mut c = [0f32; 3];
                    for (k, slot) in c.iter_mut().enumerate() {
                        let v: u16 = fields[3 + k].parse().map_err(|_| {
                            parse_err(line_no, format!("bad color '{}'", fields[3 + k]))
                        })?;
                        if v > 255 {
                            return Err(parse_err(line_no, format!("color {v} exceeds 255")));
                        }
                        *slot = v as f32 / 255.0;
                    }
                    c
                } else {
                    [0.5; 3]
                };
                positions.push(pos);
                colors.push(col);
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let body = &bytes[header.body_start..];
            let stride = if header.has_color { 15 } else { 12 };
            let available = body.len() / stride;
            if available < header.vertex_count {
                return Err(Error::Truncated {
                    what: "vertices",
                    expected: header.vertex_count,
                    found: available,
                });
            }
            for i in 0..header.vertex_count {
                let rec = &body[i * stride..(i + 1) * stride];
                let pos = [
                    f32::from_le_bytes(rec[0..4].try_into().unwrap()),
                    f32::from_le_bytes(rec[4..8].try_into().unwrap()),
                    f32::from_le_bytes(rec[8..12].try_into().unwrap()),
                ];
                let col = if header.has_color {
                    [
                        rec[12] as f32 / 255.0,
                        rec[13] as f32 / 255.0,
                        rec[14] as f32 / 255.0,
                    ]
                } else {
                    [0.5; 3]
                };
                positions.push(pos);
                colors.push(col);
            }
        }
    }

    if positions.len() != header.vertex_count {
        return Err(Error::Truncated {
            what: "vertices",
            expected: header.vertex_count,
            found: positions.len(),
        });
    }

    for (i, p) in positions.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "vertex position".to_string(),
                index: i,
            });
        }
    }

    PointCloud::new(positions, colors)
}

/// Serialize a point cloud. Binary mode round-trips positions exactly;
/// colors are quantized to 8 bits either way.
pub fn write_ply(cloud: &PointCloud, ascii: bool) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"ply\n");
    if ascii {
        out.extend_from_slice(b"format ascii 1.0\n");
    } else {
        out.extend_from_slice(b"format binary_little_endian 1.0\n");
    }
    out.extend_from_slice(format!("element vertex {}\n", cloud.len()).as_bytes());
    out.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
    out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.extend_from_slice(b"end_header\n");

    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        let rgb = [
            (c[0] * 255.0).round().clamp(0.0, 255.0) as u8,
            (c[1] * 255.0).round().clamp(0.0, 255.0) as u8,
            (c[2] * 255.0).round().clamp(0.0, 255.0) as u8,
        ];
        if ascii {
            // `{}` on f32 prints the shortest digits that reparse exactly.
            out.extend_from_slice(
                format!(
                    "{} {} {} {} {} {}\n",
                    p[0], p[1], p[2], rgb[0], rgb[1], rgb[2]
                )
                .as_bytes(),
            );
        } else {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&rgb);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn ascii_single_vertex_with_color() {
        let data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 0\n";
        let cloud = parse_ply(data).unwrap();
        assert_eq!(cloud.positions, vec![[0.0, 0.0, 0.0]]);
        assert_eq!(cloud.colors, vec![[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn missing_colors_default_to_mid_gray() {
        let data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        let cloud = parse_ply(data).unwrap();
        assert_eq!(cloud.colors, vec![[0.5, 0.5, 0.5]]);
    }

    #[test]
    fn declared_two_vertices_but_one_present_is_truncation() {
        let data = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        match parse_ply(data).unwrap_err() {
            Error::Truncated { expected, found, .. } => {
                assert_eq!((expected, found), (2, 1));
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn binary_truncation_reports_counts() {
        let mut data = Vec::new();
        data.extend_from_slice(b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n");
        data.extend_from_slice(&[0u8; 12]); // one vertex only
        match parse_ply(&data).unwrap_err() {
            Error::Truncated { expected, found, .. } => assert_eq!((expected, found), (3, 1)),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_line() {
        let data = b"ply\nformat ascii 1.0\nelephant vertex 1\nend_header\n";
        match parse_ply(data).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_coordinate_names_point_index() {
        let mut data = Vec::new();
        data.extend_from_slice(b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n");
        data.extend_from_slice(&[0u8; 12]);
        data.extend_from_slice(&f32::NAN.to_le_bytes());
        data.extend_from_slice(&[0u8; 8]);
        match parse_ply(&data).unwrap_err() {
            Error::NonFinite { index, .. } => assert_eq!(index, 1),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn ascii_output_declares_format() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0]], vec![[0.0, 0.0, 0.0]]).unwrap();
        let bytes = write_ply(&cloud, true);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\n"));
    }

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = SplitMix64::new(seed);
        let positions = (0..n)
            .map(|_| {
                [
                    rng.range_f64(-10.0, 10.0) as f32,
                    rng.range_f64(-10.0, 10.0) as f32,
                    rng.range_f64(0.0, 4.0) as f32,
                ]
            })
            .collect();
        let colors = (0..n)
            .map(|_| {
                [
                    (rng.below(256) as f32) / 255.0,
                    (rng.below(256) as f32) / 255.0,
                    (rng.below(256) as f32) / 255.0,
                ]
            })
            .collect();
        PointCloud::new(positions, colors).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let cloud = random_cloud(11, 1000);
        let parsed = parse_ply(&write_ply(&cloud, false)).unwrap();
        assert_eq!(parsed.positions, cloud.positions);
        assert_eq!(parsed.colors, cloud.colors);
    }

    #[test]
    fn ascii_round_trip_is_exact_on_positions() {
        let cloud = random_cloud(13, 200);
        let parsed = parse_ply(&write_ply(&cloud, true)).unwrap();
        assert_eq!(parsed.positions, cloud.positions);
        for (a, b) in parsed.colors.iter().zip(&cloud.colors) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn huge_declared_count_does_not_allocate() {
        let data = b"ply\nformat binary_little_endian 1.0\nelement vertex 99999999999\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(matches!(
            parse_ply(data).unwrap_err(),
            Error::Truncated { .. }
        ));
    }
}
