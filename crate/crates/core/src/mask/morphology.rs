use super::BinaryMask;

impl BinaryMask {
    /// One-pixel inner boundary: foreground pixels with at least one
    /// 4-neighbour that is background or outside the frame.
    pub fn boundary(&self) -> BinaryMask {
        let (h, w) = (self.height(), self.width());
        let mut out = BinaryMask::empty(h, w).expect("shape already validated");
        for (y, x) in self.ones() {
            let edge = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !self.get(y - 1, x)
                || !self.get(y + 1, x)
                || !self.get(y, x - 1)
                || !self.get(y, x + 1);
            if edge {
                out.set_index(y * w + x);
            }
        }
        out
    }

    /// One step of 4-connected erosion, treating out-of-frame pixels as background.
    pub fn eroded(&self) -> BinaryMask {
        self.and_not(&self.boundary()).expect("same shape")
    }

    /// Dilation by the digital disk `{(dy, dx) : dy² + dx² <= radius²}`.
    pub fn dilated_disk(&self, radius: usize) -> BinaryMask {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let (h, w) = (self.height(), self.width());
        let src = self.to_bytes();
        let r = radius as isize;

        // horizontal dilation of every row, one buffer per distinct half-width
        let mut by_half: Vec<Option<Vec<u8>>> = vec![None; radius + 1];
        let half_for = |dy: isize| -> usize {
            let rem = (r * r - dy * dy) as usize;
            rem.isqrt()
        };
        for dy in -r..=r {
            let half = half_for(dy);
            if by_half[half].is_none() {
                by_half[half] = Some(horizontal_dilate(&src, h, w, half));
            }
        }

        let mut out = vec![0u8; h * w];
        for dy in -r..=r {
            let rows = by_half[half_for(dy)].as_ref().expect("filled above");
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let src_row = &rows[sy as usize * w..(sy as usize + 1) * w];
                let dst_row = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst_row.iter_mut().zip(src_row) {
                    *d |= *s;
                }
            }
        }
        BinaryMask::from_bytes(h, w, &out).expect("shape already validated")
    }
}

fn horizontal_dilate(src: &[u8], h: usize, w: usize, half: usize) -> Vec<u8> {
    let mut out = vec![0u8; h * w];
    let mut prefix = vec![0u32; w + 1];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as u32;
        }
        for x in 0..w {
            let lo = x.saturating_sub(half);
            let hi = (x + half + 1).min(w);
            out[y * w + x] = u8::from(prefix[hi] > prefix[lo]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, top: usize, left: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |y, x| {
            (top..top + side).contains(&y) && (left..left + side).contains(&x)
        })
        .unwrap()
    }

    #[test]
    fn square_boundary_is_its_perimeter() {
        let b = square(20, 7, 7, 6).boundary();
        assert_eq!(b.area(), 20);
        assert!(b.get(7, 7) && b.get(12, 12) && b.get(9, 7));
        assert!(!b.get(9, 9));
    }

    #[test]
    fn frame_edge_counts_as_background() {
        let full = BinaryMask::full(4, 5).unwrap();
        let b = full.boundary();
        assert_eq!(b.area(), 4 * 5 - 2 * 3);
        assert!(!b.get(1, 1));
    }

    #[test]
    fn erosion_peels_one_layer() {
        let e = square(10, 2, 2, 5).eroded();
        assert_eq!(e, square(10, 3, 3, 3));
        assert!(BinaryMask::empty(3, 3).unwrap().eroded().is_empty());
    }

    #[test]
    fn disk_dilation_matches_brute_force() {
        let m = BinaryMask::from_fn(15, 17, |y, x| (y * 7 + x * 3) % 29 == 0).unwrap();
        for r in 0..5usize {
            let d = m.dilated_disk(r);
            let expected = BinaryMask::from_fn(15, 17, |y, x| {
                m.ones().any(|(py, px)| {
                    let dy = py as isize - y as isize;
                    let dx = px as isize - x as isize;
                    (dy * dy + dx * dx) as usize <= r * r
                })
            })
            .unwrap();
            assert_eq!(d, expected, "radius {r}");
        }
    }

    #[test]
    fn radius_one_is_a_plus() {
        let m = BinaryMask::empty(5, 5).unwrap().with_pixel(2, 2, true);
        let d = m.dilated_disk(1);
        assert_eq!(d.area(), 5);
        assert!(d.get(1, 2) && d.get(3, 2) && d.get(2, 1) && d.get(2, 3));
        assert!(!d.get(1, 1));
    }
}
