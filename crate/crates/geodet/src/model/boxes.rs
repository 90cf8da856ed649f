//! Axis-aligned box overlap: IoU, the distance-penalized IoU loss, and its
//! analytic gradient with respect to the predicted box.

use crate::types::Box3D;

/// Intersection volume over union volume of two axis-aligned boxes. Volumes
/// are taken from the same corner differences as the overlaps, so identical
/// boxes give exactly 1.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let a_min = a.min_corner();
    let a_max = a.max_corner();
    let b_min = b.min_corner();
    let b_max = b.max_corner();
    let mut inter = 1.0f64;
    let mut vol_a = 1.0f64;
    let mut vol_b = 1.0f64;
    for axis in 0..3 {
        let overlap = (a_max[axis].min(b_max[axis]) - a_min[axis].max(b_min[axis])).max(0.0);
        inter *= overlap;
        vol_a *= a_max[axis] - a_min[axis];
        vol_b *= b_max[axis] - b_min[axis];
    }
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// DIoU loss: `1 - IoU + rho^2 / c^2`, where `rho` is the distance between
/// the box centers and `c` the diagonal of the smallest axis-aligned box
/// enclosing both. If the enclosing box degenerates to a point the penalty
/// term is defined as zero.
pub fn diou_loss(pred: &Box3D, gt: &Box3D) -> f64 {
    let iou = iou_3d(pred, gt);
    let mut rho2 = 0.0f64;
    for axis in 0..3 {
        let d = pred.center[axis] - gt.center[axis];
        rho2 += d * d;
    }
    let p_min = pred.min_corner();
    let p_max = pred.max_corner();
    let g_min = gt.min_corner();
    let g_max = gt.max_corner();
    let mut c2 = 0.0f64;
    for axis in 0..3 {
        let e = p_max[axis].max(g_max[axis]) - p_min[axis].min(g_min[axis]);
        c2 += e * e;
    }
    if c2 <= 0.0 {
        return 1.0 - iou;
    }
    1.0 - iou + rho2 / c2
}

/// DIoU loss plus its gradient with respect to the predicted center and
/// size. At the (measure-zero) points where a min/max switches branches the
/// gradient of the branch active for the predicted box is returned.
pub fn diou_loss_grad(pred: &Box3D, gt: &Box3D) -> (f64, [f64; 3], [f64; 3]) {
    let p_min = pred.min_corner();
    let p_max = pred.max_corner();
    let g_min = gt.min_corner();
    let g_max = gt.max_corner();

    // Intersection volume and the per-axis overlaps. Volumes come from the
    // same corner differences so identical boxes cancel exactly.
    let mut overlap = [0.0f64; 3];
    let mut vol_p = 1.0f64;
    let mut vol_g = 1.0f64;
    for axis in 0..3 {
        overlap[axis] = (p_max[axis].min(g_max[axis]) - p_min[axis].max(g_min[axis])).max(0.0);
        vol_p *= p_max[axis] - p_min[axis];
        vol_g *= g_max[axis] - g_min[axis];
    }
    let inter: f64 = overlap.iter().product();
    let union = vol_p + vol_g - inter;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };

    // d inter / d (center, size) per axis of the predicted box.
    let mut d_inter_dc = [0.0f64; 3];
    let mut d_inter_ds = [0.0f64; 3];
    if inter > 0.0 {
        for axis in 0..3 {
            let others: f64 = (0..3)
                .filter(|&k| k != axis)
                .map(|k| overlap[k])
                .product();
            // overlap = min(p_max, g_max) - max(p_min, g_min)
            let d_over_dpmax = if p_max[axis] < g_max[axis] { 1.0 } else { 0.0 };
            let d_over_dpmin = if p_min[axis] > g_min[axis] { -1.0 } else { 0.0 };
            // p_max = c + s/2, p_min = c - s/2
            d_inter_dc[axis] = others * (d_over_dpmax + d_over_dpmin);
            d_inter_ds[axis] = others * (0.5 * d_over_dpmax - 0.5 * d_over_dpmin);
        }
    }

    // d IoU via quotient rule; d union = d vol_p - d inter.
    let mut d_iou_dc = [0.0f64; 3];
    let mut d_iou_ds = [0.0f64; 3];
    if union > 0.0 {
        for axis in 0..3 {
            let d_volp_ds = if pred.size[axis] != 0.0 {
                vol_p / pred.size[axis]
            } else {
                0.0
            };
            let d_union_dc = -d_inter_dc[axis];
            let d_union_ds = d_volp_ds - d_inter_ds[axis];
            d_iou_dc[axis] = (d_inter_dc[axis] * union - inter * d_union_dc) / (union * union);
            d_iou_ds[axis] = (d_inter_ds[axis] * union - inter * d_union_ds) / (union * union);
        }
    }

    // Center-distance penalty.
    let mut rho2 = 0.0f64;
    for axis in 0..3 {
        let d = pred.center[axis] - gt.center[axis];
        rho2 += d * d;
    }
    let mut c2 = 0.0f64;
    let mut extent = [0.0f64; 3];
    for axis in 0..3 {
        extent[axis] = p_max[axis].max(g_max[axis]) - p_min[axis].min(g_min[axis]);
        c2 += extent[axis] * extent[axis];
    }

    let mut grad_center = [0.0f64; 3];
    let mut grad_size = [0.0f64; 3];
    let loss = if c2 <= 0.0 {
        for axis in 0..3 {
            grad_center[axis] = -d_iou_dc[axis];
            grad_size[axis] = -d_iou_ds[axis];
        }
        1.0 - iou
    } else {
        for axis in 0..3 {
            let d_rho2_dc = 2.0 * (pred.center[axis] - gt.center[axis]);
            // extent depends on pred only through the active min/max branch
            let d_emax = if p_max[axis] > g_max[axis] { 1.0 } else { 0.0 };
            let d_emin = if p_min[axis] < g_min[axis] { 1.0 } else { 0.0 };
            let d_ext_dc = d_emax - d_emin;
            let d_ext_ds = 0.5 * d_emax + 0.5 * d_emin;
            let d_c2_dc = 2.0 * extent[axis] * d_ext_dc;
            let d_c2_ds = 2.0 * extent[axis] * d_ext_ds;
            let d_pen_dc = (d_rho2_dc * c2 - rho2 * d_c2_dc) / (c2 * c2);
            let d_pen_ds = (-rho2 * d_c2_ds) / (c2 * c2);
            grad_center[axis] = -d_iou_dc[axis] + d_pen_dc;
            grad_size[axis] = -d_iou_ds[axis] + d_pen_ds;
        }
        1.0 - iou + rho2 / c2
    };

    (loss, grad_center, grad_size)
}
