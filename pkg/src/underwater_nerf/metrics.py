"""Full-reference (PSNR, SSIM) and no-reference underwater (UIQM, UCIQE) image metrics.

All functions take float images in [0, 1], shape (H, W, 3).

UIQM = C_UICM * UICM + C_UISM * UISM + C_UICONM * UIConM, computed on the
0-255 scale:

* UICM (colorfulness): opponent channels RG = R - G and YB = (R + G) / 2 - B,
  each summarized by an alpha-trimmed mean and variance (ALPHA_TRIM of the
  sorted values dropped at each end);
  UICM = -0.0268 * |mu| + 0.1586 * sqrt(var_rg + var_yb).
* UISM (sharpness): per channel, Sobel gradient magnitude multiplied by the
  channel, then EME over EME_BLOCK x EME_BLOCK blocks; channels weighted by
  Rec.601 luma coefficients.
* UIConM (contrast): log-AMEE of the intensity image over the same blocks,
  -mean(r log r) with the Michelson ratio r = (max - min) / (max + min)
  (ordinary arithmetic in place of the PLIP operators, as in the widely used
  reference implementation).

UCIQE = W_CHROMA * std(chroma) + W_CONTRAST * luma_contrast + W_SATURATION * mean(saturation)
in CIELab, with chroma and luma rescaled to [0, 1] (chroma / CHROMA_SCALE, L / 100);
luma_contrast is the spread between the top and bottom UCIQE_TAIL fractions of L,
and saturation = chroma / L (0 where L = 0).
"""

import math

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab

from .validation import check_image

PSNR_CAP = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

C_UICM, C_UISM, C_UICONM = 0.0282, 0.2953, 3.5753
ALPHA_TRIM = 0.1
EME_BLOCK = 8

W_CHROMA, W_CONTRAST, W_SATURATION = 0.4680, 0.2745, 0.2576
CHROMA_SCALE = 128.0
UCIQE_TAIL = 0.01


def _pair(a, b):
    a, b = check_image(a, "a"), check_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(value, cap=PSNR_CAP):
    if value < 0:
        raise ValueError("MSE must be nonnegative")
    if value == 0:
        return cap
    return min(cap, -10.0 * math.log10(value))


def psnr(a, b, cap=PSNR_CAP):
    """10 log10(1 / MSE) for [0, 1] images; identical images give ``cap``."""
    return psnr_from_mse(mse(a, b), cap)


def luma(image):
    return image @ LUMA_WEIGHTS


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _valid_filter(x, g):
    """Separable Gaussian window sums at every position where the window fits entirely."""
    r = len(g) // 2
    out = ndimage.correlate1d(ndimage.correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim_map(a, b):
    a, b = _pair(a, b)
    x, y = luma(a), luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    w = _gaussian_window()
    c1, c2 = (SSIM_K1 * 1.0) ** 2, (SSIM_K2 * 1.0) ** 2
    mx, my = _valid_filter(x, w), _valid_filter(y, w)
    vx = _valid_filter(x * x, w) - mx**2
    vy = _valid_filter(y * y, w) - my**2
    cxy = _valid_filter(x * y, w) - mx * my
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))


def ssim(a, b):
    """Single-scale SSIM on Rec.601 luma, Gaussian 11x11 window, mean over valid windows."""
    a, b = _pair(a, b)
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(ssim_map(a, b).mean(), -1.0, 1.0))


# --- UIQM --------------------------------------------------------------------------


def _trimmed_stats(values, alpha=ALPHA_TRIM):
    v = np.sort(values.ravel())
    k = len(v)
    lo, hi = int(math.ceil(alpha * k)), int(math.floor(alpha * k))
    trimmed = v[lo : k - hi]
    mu = trimmed.mean()
    return mu, float(np.mean((v - mu) ** 2))


def uicm(image):
    """Colorfulness from alpha-trimmed opponent-channel statistics."""
    rgb = check_image(image) * 255.0
    rg = rgb[..., 0] - rgb[..., 1]
    yb = 0.5 * (rgb[..., 0] + rgb[..., 1]) - rgb[..., 2]
    mu_rg, var_rg = _trimmed_stats(rg)
    mu_yb, var_yb = _trimmed_stats(yb)
    return float(-0.0268 * math.hypot(mu_rg, mu_yb) + 0.1586 * math.sqrt(var_rg + var_yb))


def _blocks(x, block=EME_BLOCK):
    """Non-overlapping block view (bh, bw, block, block), cropping any remainder."""
    H, W = x.shape
    bh, bw = H // block, W // block
    if bh == 0 or bw == 0:
        raise ValueError(f"image smaller than one {block}x{block} block")
    x = x[: bh * block, : bw * block]
    return x.reshape(bh, block, bw, block).swapaxes(1, 2)


def eme(x, block=EME_BLOCK):
    """Measure of enhancement: 2 / K times the sum over K blocks of log(max / min); zero blocks add 0."""
    b = _blocks(x, block)
    mx, mn = b.max(axis=(2, 3)), b.min(axis=(2, 3))
    ok = (mn > 0) & (mx > 0)
    terms = np.zeros_like(mx)
    terms[ok] = np.log(mx[ok] / mn[ok])
    return float(terms.sum() * 2.0 / terms.size)


def uism(image):
    """Sharpness: luma-weighted EME of Sobel edge maps masked by each channel."""
    rgb = check_image(image) * 255.0
    total = 0.0
    for c, weight in enumerate(LUMA_WEIGHTS):
        ch = rgb[..., c]
        grad = np.hypot(ndimage.sobel(ch, axis=0), ndimage.sobel(ch, axis=1))
        total += weight * eme(grad * ch / 255.0)
    return float(total)


def uiconm(image, block=EME_BLOCK):
    """Contrast: negated block mean of r log r with r = (max - min) / (max + min) of the intensity."""
    rgb = check_image(image) * 255.0
    b = _blocks(rgb.mean(axis=-1), block)
    mx, mn = b.max(axis=(2, 3)), b.min(axis=(2, 3))
    num, den = mx - mn, mx + mn
    ok = (num > 0) & (den > 0)
    terms = np.zeros_like(num)
    r = num[ok] / den[ok]
    terms[ok] = r * np.log(r)
    return float(-terms.mean())


def uiqm(image):
    return C_UICM * uicm(image) + C_UISM * uism(image) + C_UICONM * uiconm(image)


# --- UCIQE -------------------------------------------------------------------------


def uciqe_components(image):
    """(std of chroma, luma contrast, mean saturation), each on a [0, 1]-ish scale."""
    image = check_image(image)
    lab = rgb2lab(image)
    # rgb2lab leaves ~1e-3 of a*/b* on neutral pixels (white point rounding); neutral means zero chroma
    neutral = (image[..., 0] == image[..., 1]) & (image[..., 1] == image[..., 2])
    lab[neutral, 1:] = 0.0
    return lab_components(lab)


def lab_components(lab):
    L = lab[..., 0] / 100.0
    chroma = np.hypot(lab[..., 1], lab[..., 2]) / CHROMA_SCALE
    sigma_c = float(chroma.std())
    l_sorted = np.sort(L.ravel())
    n = max(1, int(round(UCIQE_TAIL * l_sorted.size)))
    contrast = float(l_sorted[-n:].mean() - l_sorted[:n].mean())
    sat = np.zeros_like(chroma)
    np.divide(chroma, L, out=sat, where=L > 0)
    return sigma_c, contrast, float(sat.mean())


def uciqe(image):
    sigma_c, contrast, mu_s = uciqe_components(image)
    return W_CHROMA * sigma_c + W_CONTRAST * contrast + W_SATURATION * mu_s
