"""Deliberately naive reference implementations used as test oracles."""
import math
from fractions import Fraction


def naive_attention(q, keys, values):
    """Per-head, per-query loop with the max-shifted softmax written out by hand."""
    heads, tq, d = q.shape
    out = [[[0.0] * values.shape[2] for _ in range(tq)] for _ in range(heads)]
    for h in range(heads):
        for a in range(tq):
            logits = [sum(q[h, a, c] * keys[h, b, c] for c in range(d)) / math.sqrt(d)
                      for b in range(keys.shape[1])]
            m = max(logits)
            w = [math.exp(x - m) for x in logits]
            z = sum(w)
            for e in range(values.shape[2]):
                out[h][a][e] = sum(w[b] * values[h, b, e] for b in range(keys.shape[1])) / z
    return out


def brute_density(weights_by_head, tokens, target):
    """``weights_by_head[h]`` is the full (T_target, sum T_1..T_target) map; double loop."""
    out = {}
    for h, w in enumerate(weights_by_head):
        col = 0
        for i in range(1, target + 1):
            total = 0.0
            for a in range(len(w)):
                for b in range(col, col + tokens[i - 1]):
                    total += w[a][b]
            out[(h, i)] = total / tokens[i - 1]
            col += tokens[i - 1]
    return out


def bilinear_pixel(src, y, x, out_h, out_w):
    """Align-corners bilinear sample at output pixel (y, x), as exact fractions."""
    in_h, in_w = len(src), len(src[0])
    fy = Fraction(y * (in_h - 1), out_h - 1) if out_h > 1 else Fraction(0)
    fx = Fraction(x * (in_w - 1), out_w - 1) if out_w > 1 else Fraction(0)
    y0, x0 = math.floor(fy), math.floor(fx)
    y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
    dy, dx = fy - y0, fx - x0
    return ((1 - dy) * (1 - dx) * src[y0][x0] + (1 - dy) * dx * src[y0][x1]
            + dy * (1 - dx) * src[y1][x0] + dy * dx * src[y1][x1])
