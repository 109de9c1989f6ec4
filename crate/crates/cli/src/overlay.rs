use lvquant::image::{Image, LabelMap, BACKGROUND};

/// Binary PGM of the image in gray levels 0..=200 with label borders drawn at 255.
pub fn overlay_pgm(img: &Image, labels: &LabelMap) -> Vec<u8> {
    let (lo, hi) = img.data.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", img.w, img.h).into_bytes();
    for y in 0..img.h {
        for x in 0..img.w {
            let l = labels.get(y, x);
            let border = l != BACKGROUND
                && [(0isize, 1isize), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dy, dx)| {
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    ny < 0 || nx < 0 || ny >= img.h as isize || nx >= img.w as isize || labels.get(ny as usize, nx as usize) != l
                });
            out.push(if border { 255 } else { ((img.get(y, x) - lo) / span * 200.0).round() as u8 });
        }
    }
    out
}
