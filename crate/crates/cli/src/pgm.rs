//! Binary greymap (P5) image grids.

/// Value of separator pixels.
pub const SEPARATOR: u8 = 255;

/// Linear map of `[−1, 1]` onto `0..=255`, clamping outside values.
pub fn pixel(x: f64) -> u8 {
    if x.is_nan() {
        return 0;
    }
    ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Grid of `rows × cols` images of `height × width` pixels, row-major in
/// `cells`, with `sep`-pixel separators between neighbouring cells.
pub fn encode_grid(
    cells: &[Vec<f64>],
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
    sep: usize,
) -> Vec<u8> {
    assert_eq!(cells.len(), rows * cols, "grid cell count");
    let gw = cols * width + cols.saturating_sub(1) * sep;
    let gh = rows * height + rows.saturating_sub(1) * sep;
    let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + gw * gh, SEPARATOR);
    let body = &mut out[header..];
    for (i, cell) in cells.iter().enumerate() {
        assert_eq!(cell.len(), height * width, "grid cell size");
        let (r, c) = (i / cols, i % cols);
        let (y0, x0) = (r * (height + sep), c * (width + sep));
        for y in 0..height {
            for x in 0..width {
                body[(y0 + y) * gw + x0 + x] = pixel(cell[y * width + x]);
            }
        }
    }
    out
}

/// `(width, height, payload)` of a P5 file written by [`encode_grid`].
pub fn decode(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let w: usize = fields[1].parse().ok()?;
    let h: usize = fields[2].parse().ok()?;
    let payload = bytes.get(pos + 1..)?;
    (payload.len() == w * h).then_some((w, h, payload))
}
