"""Network definitions: attention nets, transformation nets, patch
discriminators, and the layered compositor.

Generator-style trunks (shared by attention and transformation nets, toy
32x32 scale): 7x7 conv -> strided 3x3 conv -> 2 residual blocks -> nearest
upsample + 3x3 conv -> 7x7 output conv, with instance norm + relu after every
conv except the output.  Generator convs use reflection padding,
discriminator convs zero padding.  Weights init normal(0, 0.02), biases zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor

RANGE_TOL = 1e-5

_ACTS = {
    "relu": engine.relu,
    "leaky_relu": engine.leaky_relu,
    "sigmoid": engine.sigmoid,
    "tanh": engine.tanh,
    None: None,
}


def generator_arch(width_base, in_channels, out_channels, final_act,
                   residual_input=False):
    wb = width_base
    layers = _trunk(wb, in_channels, out_channels, final_act)
    if residual_input:
        layers.append(dict(kind="skip_clip"))
    return layers


def _trunk(wb, in_channels, out_channels, final_act):
    return [
        dict(kind="conv", k=7, s=1, pad=3, pad_mode="reflect",
             cin=in_channels, cout=wb, norm=True, act="relu"),
        dict(kind="conv", k=3, s=2, pad=1, pad_mode="reflect",
             cin=wb, cout=2 * wb, norm=True, act="relu"),
        dict(kind="res", ch=2 * wb),
        dict(kind="res", ch=2 * wb),
        dict(kind="up"),
        dict(kind="conv", k=3, s=1, pad=1, pad_mode="reflect",
             cin=2 * wb, cout=wb, norm=True, act="relu"),
        dict(kind="conv", k=7, s=1, pad=3, pad_mode="reflect",
             cin=wb, cout=out_channels, norm=False, act=final_act),
    ]


def discriminator_arch(width_base, in_channels):
    wb = width_base
    layers = []
    cin = in_channels
    for i, cout in enumerate((wb, 2 * wb, 4 * wb)):
        layers.append(dict(kind="conv", k=4, s=2, pad=1, pad_mode="zero",
                           cin=cin, cout=cout, norm=(i > 0), act="leaky_relu"))
        cin = cout
    # final 4x4 stride-1 conv; asymmetric zero pad keeps the spatial size
    layers.append(dict(kind="conv", k=4, s=1, pad=((1, 2), (1, 2)), pad_mode="zero",
                       cin=cin, cout=1, norm=False, act=None))
    return layers


@dataclass
class NetworkParams:
    arch: list
    params: dict = field(default_factory=dict)  # name -> Tensor, insertion-ordered

    def named_tensors(self):
        return list(self.params.items())


def _init_conv(params, prefix, cin, cout, k, rng):
    w = rng.normal(0.0, 0.02, size=(cout, cin, k, k)).astype(np.float32)
    params[prefix + ".weight"] = Tensor(w, requires_grad=True)
    params[prefix + ".bias"] = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)


def _init_norm(params, prefix, ch):
    params[prefix + ".gamma"] = Tensor(np.ones(ch, dtype=np.float32), requires_grad=True)
    params[prefix + ".beta"] = Tensor(np.zeros(ch, dtype=np.float32), requires_grad=True)


def build_network(arch, rng):
    params = {}
    for i, layer in enumerate(arch):
        name = str(i)
        if layer["kind"] == "conv":
            _init_conv(params, name, layer["cin"], layer["cout"], layer["k"], rng)
            if layer["norm"]:
                _init_norm(params, name + ".norm", layer["cout"])
        elif layer["kind"] == "res":
            ch = layer["ch"]
            for j in (1, 2):
                _init_conv(params, "%s.conv%d" % (name, j), ch, ch, 3, rng)
                _init_norm(params, "%s.norm%d" % (name, j), ch)
        elif layer["kind"] in ("up", "skip_clip"):
            pass
        else:
            raise ValueError("unknown layer kind %r" % (layer["kind"],))
    return NetworkParams(arch=arch, params=params)


def run_network(net, x):
    h = x
    p = net.params
    for i, layer in enumerate(net.arch):
        name = str(i)
        if layer["kind"] == "conv":
            h = engine.conv2d(h, p[name + ".weight"], p[name + ".bias"],
                              stride=layer["s"], pad=layer["pad"],
                              pad_mode=layer["pad_mode"])
            if layer["norm"]:
                h = engine.instance_norm(h, p[name + ".norm.gamma"], p[name + ".norm.beta"])
            act = _ACTS[layer["act"]]
            if act is not None:
                h = act(h)
        elif layer["kind"] == "res":
            r = engine.conv2d(h, p[name + ".conv1.weight"], p[name + ".conv1.bias"],
                              stride=1, pad=1, pad_mode="reflect")
            r = engine.relu(engine.instance_norm(r, p[name + ".norm1.gamma"],
                                                 p[name + ".norm1.beta"]))
            r = engine.conv2d(r, p[name + ".conv2.weight"], p[name + ".conv2.bias"],
                              stride=1, pad=1, pad_mode="reflect")
            r = engine.instance_norm(r, p[name + ".norm2.gamma"], p[name + ".norm2.beta"])
            h = engine.add(h, r)
        elif layer["kind"] == "up":
            h = engine.nearest_upsample(h)
        elif layer["kind"] == "skip_clip":
            # residual-to-input head: h is a bounded delta; clip(x + h) keeps
            # the output in [-1,1] and makes a zero delta the exact identity
            z = engine.add(x, h)
            h = z + engine.relu(-1.0 - z) - engine.relu(z - 1.0)
    return h


@dataclass
class ModelBundle:
    a_x: NetworkParams
    a_y: NetworkParams
    t_x: NetworkParams
    t_y: NetworkParams
    d_x: NetworkParams
    d_y: NetworkParams
    image_size: int
    image_channels: int
    width_base: int
    # test hook: when set, both mappings use a constant attention map
    force_attention: float | None = None

    NETWORK_NAMES = ("a_x", "a_y", "t_x", "t_y", "d_x", "d_y")

    def networks(self):
        return [(n, getattr(self, n)) for n in self.NETWORK_NAMES]

    def generator_networks(self):
        return [(n, getattr(self, n)) for n in ("a_x", "a_y", "t_x", "t_y")]

    def named_tensors(self):
        out = {}
        for net_name, net in self.networks():
            for pname, t in net.named_tensors():
                out[net_name + "/" + pname] = t
        return out


ATTENTION_BIAS_INIT = 2.0  # final-layer bias: attention starts open (~0.88)
                           # so the sparse loss prunes instead of collapsing it


def build_bundle(width_base, image_channels, image_size, rng):
    if image_size % 4 != 0 or image_size < 8:
        raise ValueError("image_size must be a multiple of 4 and >= 8, got %d" % image_size)
    if width_base < 8:
        raise ValueError("width_base must be >= 8, got %d" % width_base)

    def attn():
        net = build_network(generator_arch(width_base, image_channels, 1, "sigmoid"), rng)
        last = str(len(net.arch) - 1)
        net.params[last + ".bias"].data[...] = ATTENTION_BIAS_INIT
        return net

    def trans():
        # residual-to-input head with a zero-initialized delta: T is the exact
        # identity at step 0, so the cycle loss starts near its optimum and the
        # adversarial signal, not the cycle term, shapes the attention maps
        net = build_network(generator_arch(width_base, image_channels,
                                           image_channels, "tanh",
                                           residual_input=True), rng)
        last_conv = str(len(net.arch) - 2)
        net.params[last_conv + ".weight"].data[...] = 0.0
        return net
    disc = lambda: build_network(discriminator_arch(width_base, image_channels), rng)
    return ModelBundle(a_x=attn(), a_y=attn(), t_x=trans(), t_y=trans(),
                       d_x=disc(), d_y=disc(), image_size=image_size,
                       image_channels=image_channels, width_base=width_base)


def _as_image_tensor(x, channels=None):
    if isinstance(x, Tensor):
        t = x
    else:
        arr = np.asarray(x, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        t = Tensor(arr)
    if t.data.ndim != 4 or t.shape[0] != 1:
        raise ValueError("expected one NCHW image, got shape %s" % (t.shape,))
    if channels is not None and t.shape[1] != channels:
        raise ValueError("expected %d channels, got shape %s" % (channels, t.shape))
    return t


def attention_forward(params, x):
    """Spatial score map in [0,1], same height/width as the input image."""
    x = _as_image_tensor(x)
    return run_network(params, x)


def transform_forward(params, x):
    """Translated image in [-1,1], same shape as the input."""
    x = _as_image_tensor(x)
    return run_network(params, x)


def discriminator_forward(params, x):
    """Unbounded patch score map (least-squares targets, no output activation)."""
    x = _as_image_tensor(x)
    return run_network(params, x)


def compose(x, a, t):
    """Layered composition a*t + (1-a)*x with the single-channel attention map
    broadcast across image channels."""
    x = _as_image_tensor(x)
    t = _as_image_tensor(t)
    a = _as_image_tensor(a, channels=1)
    if a.data.min() < -RANGE_TOL or a.data.max() > 1.0 + RANGE_TOL:
        raise ValueError("attention map outside [0,1]: min=%g max=%g"
                         % (a.data.min(), a.data.max()))
    if x.shape != t.shape or a.shape[2:] != x.shape[2:]:
        raise ValueError("compose: shapes do not conform: x=%s a=%s t=%s"
                         % (x.shape, a.shape, t.shape))
    return engine.add(engine.mul(a, t), engine.mul(1.0 - a, x))


def _mapped(bundle, x, attn_net, trans_net):
    x = _as_image_tensor(x, channels=bundle.image_channels)
    if bundle.force_attention is not None:
        v = float(bundle.force_attention)
        a = Tensor(np.full((1, 1) + x.shape[2:], v, dtype=x.data.dtype))
    else:
        a = attention_forward(attn_net, x)
    t = transform_forward(trans_net, x)
    return compose(x, a, t), a, t


def map_g(bundle, x):
    """X -> Y mapping; returns (composite, attention map, transformed image)."""
    return _mapped(bundle, x, bundle.a_x, bundle.t_x)


def map_f(bundle, y):
    """Y -> X mapping; mirror of map_g."""
    return _mapped(bundle, y, bundle.a_y, bundle.t_y)
