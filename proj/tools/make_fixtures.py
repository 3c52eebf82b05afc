#!/usr/bin/env python3
"""Regenerates the committed test fixtures and the sample campaign.

Reference outputs are computed here with numpy, independently of the C++
forward pass, and frozen into the fixture files.
"""
import json
import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIX = ROOT / "tests" / "fixtures"
SAMPLES = ROOT / "samples"


def layer(w, b, act):
    rows, cols = w.shape
    return {
        "rows": int(rows),
        "cols": int(cols),
        "weights": [float(v) for v in w.reshape(-1)],
        "bias": [float(v) for v in b],
        "activation": act,
    }


def forward(layers, x):
    cur = np.asarray(x, dtype=np.float64).reshape(-1)
    for l in layers:
        w = np.asarray(l["weights"]).reshape(l["rows"], l["cols"])
        z = w @ cur + np.asarray(l["bias"])
        if l["activation"] == "relu":
            z = np.maximum(z, 0.0)
        elif l["activation"] == "softmax":
            z = np.exp(z - z.max())
            z = z / z.sum()
        cur = z
    return cur


def write(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=None, separators=(",", ":")) + "\n")


def small_mlp():
    rng = np.random.default_rng(20240611)
    layers = [
        layer(rng.normal(scale=0.8, size=(5, 4)), rng.normal(scale=0.1, size=5), "relu"),
        layer(rng.normal(scale=0.8, size=(3, 5)), rng.normal(scale=0.1, size=3), "softmax"),
    ]
    model = {"input_shape": [2, 2, 1], "layers": layers}
    write(FIX / "mlp_small.json", model)
    image = np.array([0.1, -0.2, 0.3, 0.05])
    probs_image = forward(layers, image)
    write(
        FIX / "mlp_small_reference.json",
        {
            "zero_input_probs": [float(v) for v in forward(layers, np.zeros(4))],
            "image": {"shape": [2, 2, 1], "data": [float(v) for v in image]},
            "image_probs": [float(v) for v in probs_image],
            "image_label": int(np.argmax(probs_image)),
        },
    )


def random_strokes(rng, count):
    """Endpoints of `count` line segments inside a 14x14 canvas."""
    return rng.uniform(2.0, 11.0, size=(count, 2, 2))


def render_strokes(strokes, width=1.1):
    """Anti-aliased strokes: background at -0.5, ink saturating at +0.5."""
    rr, cc = np.mgrid[0:14, 0:14].astype(float)
    ink = np.zeros((14, 14))
    for (r0, c0), (r1, c1) in strokes:
        dr, dc = r1 - r0, c1 - c0
        t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / max(dr * dr + dc * dc, 1e-9), 0.0, 1.0)
        dist = np.hypot(rr - (r0 + t * dr), cc - (c0 + t * dc))
        ink = np.maximum(ink, np.clip(1.5 - dist / width, 0.0, 1.0))
    return (ink - 0.5)[:, :, None]


def synthetic_digits(rng, prototypes, count, jitter):
    """Stroke prototypes with jittered endpoints and a small random shift."""
    xs, ys = [], []
    for _ in range(count):
        k = int(rng.integers(len(prototypes)))
        strokes = prototypes[k] + rng.normal(scale=jitter, size=prototypes[k].shape)
        strokes = strokes + rng.integers(-1, 2, size=2)
        xs.append(np.clip(render_strokes(strokes), -0.5, 0.5).reshape(-1))
        ys.append(k)
    return np.array(xs), np.array(ys)


def train_mlp(rng, x, y, hidden, classes, epochs, lr, decay):
    """Full-batch softmax regression through one ReLU layer, plain gradient descent with momentum."""
    n = x.shape[1]
    w1 = rng.normal(scale=np.sqrt(2.0 / n), size=(hidden, n))
    b1 = np.zeros(hidden)
    w2 = rng.normal(scale=np.sqrt(1.0 / hidden), size=(classes, hidden))
    b2 = np.zeros(classes)
    params = [w1, b1, w2, b2]
    vel = [np.zeros_like(p) for p in params]
    onehot = np.eye(classes)[y]
    for _ in range(epochs):
        h = np.maximum(x @ w1.T + b1, 0.0)
        z = h @ w2.T + b2
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        dz = (p - onehot) / len(x)
        gw2 = dz.T @ h + decay * w2
        gb2 = dz.sum(axis=0)
        dh = (dz @ w2) * (h > 0)
        gw1 = dh.T @ x + decay * w1
        gb1 = dh.sum(axis=0)
        for v, g, prm in zip(vel, [gw1, gb1, gw2, gb2], params):
            v *= 0.9
            v -= lr * g
            prm += v
    return params


def mlp_14x14():
    rng = np.random.default_rng(1414)
    hidden, classes = 64, 10
    prototypes = [random_strokes(rng, 3) for _ in range(classes)]
    x, y = synthetic_digits(rng, prototypes, 2000, 0.6)
    w1, b1, w2, b2 = train_mlp(rng, x, y, hidden, classes, epochs=400, lr=0.5, decay=1e-4)
    layers = [layer(w1, b1, "relu"), layer(w2, b2, "softmax")]
    model = {"input_shape": [14, 14, 1], "layers": layers}
    write(FIX / "mlp_14x14.json", model)

    train_acc = np.mean([np.argmax(forward(layers, xi)) == yi for xi, yi in zip(x, y)])
    # Held-out images: the first correctly classified draw of each class.
    images = []
    for k in range(classes):
        while True:
            xi, yi = synthetic_digits(rng, prototypes, 1, 0.6)
            if yi[0] == k and np.argmax(forward(layers, xi[0])) == k:
                break
        images.append({"id": f"img{k}", "shape": [14, 14, 1], "data": [float(v) for v in xi[0]]})
    write(FIX / "mlp_14x14_images.json", {"images": images})
    labels = [int(np.argmax(forward(layers, np.array(im["data"])))) for im in images]
    print(f"14x14 training accuracy: {train_acc:.3f}")
    return model, images, labels


def samples(model, images):
    write(SAMPLES / "model.json", model)
    entries = []
    for im in images[:2]:
        write(SAMPLES / "images" / f"{im['id']}.json", {"shape": im["shape"], "data": im["data"]})
        entries.append({"id": im["id"], "path": f"images/{im['id']}.json"})
    write(SAMPLES / "manifest.json", {"images": entries})
    (SAMPLES / "campaign.json").write_text(
        json.dumps(
            {
                "model": "model.json",
                "images": "manifest.json",
                "eps": [0.2, 0.1],
                "targets": "all_other_classes",
                "attackers": ["bobyqa", "random_baseline"],
                "attack": {"budget": 3000, "batch": 50, "strategy": "variance"},
                "output": "records.csv",
                "summary": "summary.json",
                "cdf_grid": [250, 500, 1000, 2000, 3000],
                "seed": 7,
            },
            indent=2,
        )
        + "\n"
    )


if __name__ == "__main__":
    small_mlp()
    model, images, labels = mlp_14x14()
    print("14x14 image labels:", labels)
    samples(model, images)
