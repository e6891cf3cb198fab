"""
Transformer encoder-decoder segmenting image tokens into category words.

The encoder contextualises the sequence of image tokens followed by the
prompt tokens. The decoder then emits one category word per image token
position. Unlike in autoregressive text generation, the decoder is *not*
fed its own previous outputs: decoder input ``i`` is the encoder output at
position ``i - 1`` (the begin-of-sequence embedding for ``i = 0``), and the
decoder reuses the image position embeddings of the encoder. As all decoder
inputs are known up-front, decoding is a single parallel pass with
bidirectional self-attention.

The decoder output at every position is projected onto the (shared) word
embedding matrix, and a softmax restricted to the segmentation categories
yields the probability of every category.

All blocks are pre-norm transformer blocks (layer norm, sublayer,
residual), without a final layer norm. Hence, with all projection weights
zero, every block passes its input through unchanged.

Cross-attention normalises the encoder output with a layer norm of its own
before computing keys and values.


Training
========

:func:`train_step` runs the forward pass on a batch, backpropagates with
:mod:`wordseg.autograd`, and updates all weights (including the word
embeddings) with :class:`AdamW`. The :class:`Trainer` class repeats this on
a :class:`wordseg.artgen.SampleStream` and logs the progress. The
learning rate follows a :class:`LearningRateSchedule`: linear warmup, then
cosine decay.


Module documentation
====================

"""
import logging
import math
import time

import numpy as np
import yaml

from wordseg import autograd, vocab


logger = logging.getLogger(__name__)

DTYPES = ("float32", "float64")


class NumericalError(ArithmeticError):
    """Raised if training produces non-finite values."""


class ModelConfig:
    """
    Sizes of the encoder-decoder.

    Attributes
    ----------
    D : :class:`int`
        Embedding width

    n_layers_enc : :class:`int`
        Number of encoder blocks

    n_layers_dec : :class:`int`
        Number of decoder blocks

    n_heads : :class:`int`
        Number of attention heads, must divide D

    L_I : :class:`int`
        Number of image tokens (H*W)

    L_T_max : :class:`int`
        Maximum number of prompt tokens

    ffn_mult : :class:`int`
        Expansion of the hidden layer of the feed-forward sublayers

    cross_attention : :class:`bool`
        Whether decoder blocks attend to the encoder output

    dtype : :class:`str`
        Floating point type of all weights, "float32" or "float64"

    Raises
    ------
    ValueError
        Raised if the sizes are inconsistent.

    """

    def __init__(
        self,
        D=64,  # noqa: N803
        n_layers_enc=2,
        n_layers_dec=2,
        n_heads=4,
        L_I=64,  # noqa: N803
        L_T_max=64,  # noqa: N803
        ffn_mult=4,
        cross_attention=True,
        dtype="float32",
    ):
        # pylint: disable=invalid-name
        self.D = int(D)
        self.n_layers_enc = int(n_layers_enc)
        self.n_layers_dec = int(n_layers_dec)
        self.n_heads = int(n_heads)
        self.L_I = int(L_I)
        self.L_T_max = int(L_T_max)
        self.ffn_mult = int(ffn_mult)
        self.cross_attention = bool(cross_attention)
        self.dtype = str(dtype)
        self._check_values()

    def _check_values(self):
        counts = (
            self.D,
            self.n_layers_enc,
            self.n_layers_dec,
            self.n_heads,
            self.L_I,
            self.L_T_max,
            self.ffn_mult,
        )
        if min(counts) < 1:
            raise ValueError("All model sizes must be positive")
        if self.D % self.n_heads:
            raise ValueError("Number of heads must divide the width D")
        if self.dtype not in DTYPES:
            raise ValueError(f"Unsupported dtype {self.dtype}")

    def shapes(self):
        """
        Return names and shapes of all weights except the embedding.

        Returns
        -------
        shapes : :class:`dict`
            Weight name -> shape, in a fixed order

        """
        width, hidden = self.D, self.ffn_mult * self.D
        shapes = {
            "bos": (width,),
            "pos.image": (self.L_I, width),
            "pos.text": (self.L_T_max, width),
        }
        for layer in range(self.n_layers_enc):
            prefix = f"enc.{layer}"
            shapes.update(_norm_shapes(f"{prefix}.ln1", width))
            shapes.update(_attention_shapes(f"{prefix}.attn", width))
            shapes.update(_norm_shapes(f"{prefix}.ln2", width))
            shapes.update(_ffn_shapes(f"{prefix}.ffn", width, hidden))
        for layer in range(self.n_layers_dec):
            prefix = f"dec.{layer}"
            shapes.update(_norm_shapes(f"{prefix}.ln1", width))
            shapes.update(_attention_shapes(f"{prefix}.self", width))
            if self.cross_attention:
                shapes.update(_norm_shapes(f"{prefix}.ln2", width))
                shapes.update(_norm_shapes(f"{prefix}.lnm", width))
                shapes.update(_attention_shapes(f"{prefix}.cross", width))
            shapes.update(_norm_shapes(f"{prefix}.ln3", width))
            shapes.update(_ffn_shapes(f"{prefix}.ffn", width, hidden))
        return shapes

    def to_dict(self):
        """Return the configuration as a dictionary."""
        return {key: getattr(self, key) for key in _CONFIG_KEYS}

    @classmethod
    def from_dict(cls, dict_=None):
        """Create a configuration from a dictionary."""
        return cls(
            **{key: dict_[key] for key in _CONFIG_KEYS if key in dict_}
        )


_CONFIG_KEYS = (
    "D",
    "n_layers_enc",
    "n_layers_dec",
    "n_heads",
    "L_I",
    "L_T_max",
    "ffn_mult",
    "cross_attention",
    "dtype",
)


def _norm_shapes(prefix, width):
    return {f"{prefix}.scale": (width,), f"{prefix}.offset": (width,)}


def _attention_shapes(prefix, width):
    return {f"{prefix}.{name}": (width, width) for name in "qkvo"}


def _ffn_shapes(prefix, width, hidden):
    return {
        f"{prefix}.up": (width, hidden),
        f"{prefix}.down": (hidden, width),
    }


class ModelParams:
    """
    Named weights of the encoder-decoder.

    The weights are :class:`wordseg.autograd.Tensor` objects requiring
    gradients. Besides the weights listed by :meth:`ModelConfig.shapes`,
    the word embedding matrix is stored as "embedding".

    Attributes
    ----------
    tensors : :class:`dict`
        Name -> :class:`wordseg.autograd.Tensor`, in a fixed order

    """

    def __init__(self, arrays=None):
        self.tensors = {
            name: autograd.parameter(array)
            for name, array in (arrays or {}).items()
        }

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __len__(self):
        return len(self.tensors)

    def items(self):
        """Return (name, tensor) pairs."""
        return self.tensors.items()

    def arrays(self):
        """Return a dictionary of copies of all weight arrays."""
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def zero_grad(self):
        """Forget all gradients."""
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def gradients(self):
        """Return the gradients, zeros for weights without gradient."""
        return {
            name: (
                np.zeros_like(t.data) if t.grad is None else t.grad
            )
            for name, t in self.tensors.items()
        }


def init_params(cfg=None, rng=None, embedding=None):
    """
    Initialise all weights.

    Projection weights and position embeddings are drawn from a normal
    distribution with standard deviation 0.02, truncated at two standard
    deviations. Layer norm scales are one and offsets zero.

    Parameters
    ----------
    cfg : :class:`ModelConfig`
        Model sizes

    rng : :class:`numpy.random.Generator`
        Generator to draw from

    embedding : :class:`wordseg.vocab.EmbeddingMatrix`
        If given, its rows become the trainable "embedding" weight

    Returns
    -------
    params : :class:`ModelParams`
        The weights, deterministic given the generator state

    """
    dtype = np.dtype(cfg.dtype)
    arrays = {}
    if embedding is not None:
        if embedding.dim != cfg.D:
            raise ValueError("Embedding width does not match the model")
        arrays["embedding"] = np.asarray(embedding.rows, dtype=dtype)
    for name, shape in cfg.shapes().items():
        if name.endswith(".scale"):
            arrays[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".offset"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            arrays[name] = vocab.truncated_normal(rng, shape, 0.02, dtype)
    return ModelParams(arrays)


class EncoderOutput:
    """
    Contextualised embeddings of image and prompt tokens.

    Attributes
    ----------
    ctx : :class:`wordseg.autograd.Tensor`
        Tensor of shape (B, L_x, D)

    """

    def __init__(self, ctx=None):
        self.ctx = ctx


class DecoderOutput:
    """
    Decoder outputs, one row per image token position.

    Attributes
    ----------
    h : :class:`wordseg.autograd.Tensor`
        Tensor of shape (B, L_I, D)

    """

    def __init__(self, h=None):
        self.h = h


def _batched(x, dtype):
    x = autograd.astensor(x, dtype=dtype)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ValueError("Expected an array of shape (B, L, D) or (L, D)")
    return x


def _layer_norm(x, params, prefix):
    return autograd.layer_norm(
        x, params[f"{prefix}.scale"], params[f"{prefix}.offset"]
    )


def _split_heads(x, n_heads):
    batch, length, width = x.shape
    return x.reshape(batch, length, n_heads, width // n_heads).transpose(
        0, 2, 1, 3
    )


def attention(queries, memory, params, prefix, n_heads, record=None):
    """
    Multi-head scaled dot-product attention.

    Parameters
    ----------
    queries : :class:`wordseg.autograd.Tensor`
        Tensor of shape (B, Lq, D) the queries are computed from

    memory : :class:`wordseg.autograd.Tensor`
        Tensor of shape (B, Lk, D) keys and values are computed from

    params : :class:`ModelParams`
        Weights, using "<prefix>.q", ".k", ".v", and ".o"

    prefix : :class:`str`
        Name prefix of the projection weights

    n_heads : :class:`int`
        Number of heads

    record : :class:`list`
        If given, the attention weights (B, heads, Lq, Lk) are appended

    Returns
    -------
    output : :class:`wordseg.autograd.Tensor`
        Tensor of shape (B, Lq, D)

    """
    batch, length, width = queries.shape
    scale = 1.0 / math.sqrt(width // n_heads)
    q = _split_heads((queries @ params[f"{prefix}.q"]) * scale, n_heads)
    k = _split_heads(memory @ params[f"{prefix}.k"], n_heads)
    v = _split_heads(memory @ params[f"{prefix}.v"], n_heads)
    weights = autograd.softmax(q @ k.transpose(0, 1, 3, 2))
    if record is not None:
        record.append(weights.data)
    output = (weights @ v).transpose(0, 2, 1, 3).reshape(batch, length, width)
    return output @ params[f"{prefix}.o"]


def _feed_forward(x, params, prefix):
    hidden = autograd.gelu(x @ params[f"{prefix}.up"])
    return hidden @ params[f"{prefix}.down"]


def encode(e_x=None, params=None, cfg=None, record=None):
    """
    Contextualise image and prompt tokens with the encoder.

    Image position embeddings are added to the first L_I rows, text
    position embeddings to the remaining rows.

    Parameters
    ----------
    e_x : :class:`numpy.ndarray` or :class:`wordseg.autograd.Tensor`
        Token embeddings of shape (B, L_x, D) or (L_x, D), with
        L_x = L_I + L_T

    params : :class:`ModelParams`
        Weights

    cfg : :class:`ModelConfig`
        Model sizes

    record : :class:`list`
        If given, attention weights of all layers are appended

    Returns
    -------
    output : :class:`EncoderOutput`
        Contextualised embeddings of shape (B, L_x, D)

    Raises
    ------
    ValueError
        Raised if the shape of the input does not fit the model.

    """
    x = _batched(e_x, cfg.dtype)
    text_length = x.shape[1] - cfg.L_I
    if x.shape[2] != cfg.D or not 0 <= text_length <= cfg.L_T_max:
        raise ValueError(
            f"Encoder input of shape {x.shape} does not fit L_I={cfg.L_I}, "
            f"L_T_max={cfg.L_T_max}, D={cfg.D}"
        )
    positions = autograd.concat(
        [params["pos.image"], params["pos.text"][:text_length]], axis=0
    )
    x = x + positions
    for layer in range(cfg.n_layers_enc):
        prefix = f"enc.{layer}"
        normed = _layer_norm(x, params, f"{prefix}.ln1")
        x = x + attention(
            normed, normed, params, f"{prefix}.attn", cfg.n_heads, record
        )
        x = x + _feed_forward(
            _layer_norm(x, params, f"{prefix}.ln2"), params, f"{prefix}.ffn"
        )
    return EncoderOutput(x)


def decoder_inputs(enc=None, params=None, cfg=None):
    """
    Assemble the decoder input sequence.

    Row ``i`` is the encoder output at ``i - 1``, row 0 the begin-of-
    sequence embedding; the image position embeddings of the encoder are
    added to all rows.

    Returns
    -------
    inputs : :class:`wordseg.autograd.Tensor`
        Tensor of shape (B, L_I, D)

    Raises
    ------
    ValueError
        Raised if the encoder output has fewer than L_I rows.

    """
    ctx = enc.ctx
    batch, rows, width = ctx.shape
    if rows < cfg.L_I:
        raise ValueError(
            f"Encoder output has {rows} rows, decoder needs {cfg.L_I}"
        )
    bos = params["bos"].reshape(1, 1, width) + np.zeros(
        (batch, 1, width), dtype=ctx.dtype
    )
    inputs = autograd.concat([bos, ctx[:, : cfg.L_I - 1, :]], axis=1)
    return inputs + params["pos.image"]


def decode_spatial(enc=None, params=None, cfg=None, record=None):
    """
    Decode one output row per image token position in a single pass.

    Parameters
    ----------
    enc : :class:`EncoderOutput`
        Encoder output with at least L_I rows

    params : :class:`ModelParams`
        Weights

    cfg : :class:`ModelConfig`
        Model sizes

    record : :class:`list`
        If given, attention weights of all layers are appended

    Returns
    -------
    output : :class:`DecoderOutput`
        Decoder outputs of shape (B, L_I, D)

    """
    x = decoder_inputs(enc, params, cfg)
    for layer in range(cfg.n_layers_dec):
        prefix = f"dec.{layer}"
        normed = _layer_norm(x, params, f"{prefix}.ln1")
        x = x + attention(
            normed, normed, params, f"{prefix}.self", cfg.n_heads, record
        )
        if cfg.cross_attention:
            x = x + attention(
                _layer_norm(x, params, f"{prefix}.ln2"),
                _layer_norm(enc.ctx, params, f"{prefix}.lnm"),
                params,
                f"{prefix}.cross",
                cfg.n_heads,
                record,
            )
        x = x + _feed_forward(
            _layer_norm(x, params, f"{prefix}.ln3"), params, f"{prefix}.ffn"
        )
    return DecoderOutput(x)


def decode_sequential(enc=None, params=None, cfg=None):
    """
    Decode position by position with explicit loops.

    Reference implementation of :func:`decode_spatial` on plain numpy
    arrays: every block computes the output of one position after the
    other, each from the full set of keys and values of the previous
    block.

    Returns
    -------
    output : :class:`numpy.ndarray`
        Decoder outputs of shape (B, L_I, D)

    """
    weights = {name: t.data for name, t in params.items()}
    inputs = decoder_inputs(enc, params, cfg).data
    memory = enc.ctx.data
    return np.stack(
        [
            _decode_one(inputs[b], memory[b], weights, cfg)
            for b in range(inputs.shape[0])
        ]
    )


def _decode_one(x, memory, weights, cfg):
    for layer in range(cfg.n_layers_dec):
        prefix = f"dec.{layer}"
        normed = _np_layer_norm(x, weights, f"{prefix}.ln1")
        x = x + _np_attention(normed, normed, weights, f"{prefix}.self", cfg)
        if cfg.cross_attention:
            normed = _np_layer_norm(x, weights, f"{prefix}.ln2")
            normed_memory = _np_layer_norm(memory, weights, f"{prefix}.lnm")
            x = x + _np_attention(
                normed, normed_memory, weights, f"{prefix}.cross", cfg
            )
        normed = _np_layer_norm(x, weights, f"{prefix}.ln3")
        rows = []
        for position in range(x.shape[0]):
            hidden = normed[position] @ weights[f"{prefix}.ffn.up"]
            rows.append(
                _np_gelu(hidden) @ weights[f"{prefix}.ffn.down"]
            )
        x = x + np.stack(rows)
    return x


def _np_layer_norm(x, weights, prefix, eps=1e-5):
    rows = []
    for row in x:
        centred = row - row.mean()
        normed = centred / np.sqrt((centred**2).mean() + eps)
        rows.append(
            normed * weights[f"{prefix}.scale"] + weights[f"{prefix}.offset"]
        )
    return np.stack(rows)


def _np_attention(queries, memory, weights, prefix, cfg):
    head_width = cfg.D // cfg.n_heads
    keys = memory @ weights[f"{prefix}.k"]
    values = memory @ weights[f"{prefix}.v"]
    rows = []
    for position in range(queries.shape[0]):
        query = queries[position] @ weights[f"{prefix}.q"]
        heads = []
        for head in range(cfg.n_heads):
            part = slice(head * head_width, (head + 1) * head_width)
            scores = keys[:, part] @ query[part] / math.sqrt(head_width)
            scores = np.exp(scores - scores.max())
            heads.append((scores / scores.sum()) @ values[:, part])
        rows.append(np.concatenate(heads) @ weights[f"{prefix}.o"])
    return np.stack(rows)


def _np_gelu(x):
    coefficient = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(coefficient * (x + 0.044715 * x**3)))


def output_logits(h=None, embedding=None):
    """
    Project decoder outputs onto the whole dictionary.

    Parameters
    ----------
    h : :class:`DecoderOutput` or :class:`numpy.ndarray`
        Decoder outputs of shape (B, L_I, D) or (L_I, D)

    embedding : :class:`wordseg.vocab.EmbeddingMatrix` or \
:class:`numpy.ndarray`
        Embedding matrix of shape (N_total, D)

    Returns
    -------
    logits : :class:`numpy.ndarray`
        Logits ``h @ E.T`` of shape (..., L_I, N_total)

    Raises
    ------
    ValueError
        Raised if the widths do not agree.

    """
    if isinstance(h, DecoderOutput):
        h = h.h.data
    rows = getattr(embedding, "rows", embedding)
    h, rows = np.asarray(h), np.asarray(rows)
    if rows.ndim != 2 or h.shape[-1] != rows.shape[1]:
        raise ValueError("Decoder output and embedding widths do not agree")
    return h @ rows.T


class SegmentationTask:
    """
    What the model is asked to do: the prompt and the categories.

    Attributes
    ----------
    prompt_ids : :class:`numpy.ndarray`
        Token ids of the prompt

    merged_ids : :class:`numpy.ndarray`
        Embedding row of every segmentation category

    """

    def __init__(self, prompt_ids=None, merged_ids=None):
        self.prompt_ids = np.asarray(prompt_ids, dtype=np.int64)
        self.merged_ids = np.asarray(merged_ids, dtype=np.int64)


def image_tokens(batch=None, params=None, cfg=None):
    """
    Return the image token embeddings of a batch.

    A batch carries either embedding rows ("rows", looked up in the
    trainable embedding, hence receiving gradients) or fixed token
    embeddings ("tokens").

    """
    if batch.get("rows") is not None:
        return autograd.take(params["embedding"], batch["rows"])
    return _batched(np.asarray(batch["tokens"], dtype=cfg.dtype), cfg.dtype)


def encoder_input(tokens=None, task=None, params=None):
    """
    Append the prompt embeddings to every sequence of image tokens.

    Returns
    -------
    e_x : :class:`wordseg.autograd.Tensor`
        Tensor of shape (B, L_I + L_T, D)

    """
    text = autograd.take(params["embedding"], task.prompt_ids)
    text = text.reshape(1, *text.shape) + np.zeros(
        (tokens.shape[0], *text.shape), dtype=text.dtype
    )
    return autograd.concat([tokens, text], axis=1)


def forward(tokens=None, task=None, params=None, cfg=None, record=None):
    """
    Run encoder and decoder and return category logits.

    Parameters
    ----------
    tokens : :class:`wordseg.autograd.Tensor`
        Image token embeddings of shape (B, L_I, D)

    task : :class:`SegmentationTask`
        Prompt and categories

    params : :class:`ModelParams`
        Weights

    cfg : :class:`ModelConfig`
        Model sizes

    record : :class:`list`
        If given, attention weights of all layers are appended

    Returns
    -------
    logits : :class:`wordseg.autograd.Tensor`
        Logits of shape (B, L_I, M), restricted to the category rows of the
        embedding, in category order

    """
    enc = encode(encoder_input(tokens, task, params), params, cfg, record)
    dec = decode_spatial(enc, params, cfg, record)
    categories = autograd.take(params["embedding"], task.merged_ids)
    return dec.h @ categories.transpose(1, 0)


class AdamW:
    """
    Adam with decoupled weight decay.

    Every step scales each weight by ``1 - lr * weight_decay`` and subtracts
    ``lr * m_hat / (sqrt(v_hat) + eps)``, where ``m_hat`` and ``v_hat`` are
    the bias-corrected first and second moment estimates.

    Attributes
    ----------
    lr : :class:`float`
        Learning rate

    weight_decay : :class:`float`
        Decoupled weight decay

    beta1 : :class:`float`
        Decay of the first moment estimate

    beta2 : :class:`float`
        Decay of the second moment estimate

    eps : :class:`float`
        Term added to the denominator

    t : :class:`int`
        Number of steps taken

    m : :class:`dict`
        First moment estimate per weight

    v : :class:`dict`
        Second moment estimate per weight

    """

    def __init__(
        self, lr=3e-4, weight_decay=0.1, beta1=0.9, beta2=0.999, eps=1e-8
    ):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params=None, grads=None):
        """
        Update all weights in place.

        Parameters
        ----------
        params : :class:`ModelParams`
            Weights to update

        grads : :class:`dict`
            Gradient per weight name

        """
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        decay = 1.0 - self.lr * self.weight_decay
        for name, tensor in params.items():
            grad = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(tensor.data)
                self.v[name] = np.zeros_like(tensor.data)
            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * grad
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * grad**2
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            tensor.data *= decay
            tensor.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class LearningRateSchedule:
    """
    Linear warmup followed by cosine decay of the learning rate.

    The rate rises linearly from ``lr / warmup`` to ``lr`` over the first
    ``warmup`` steps and then follows half a cosine down to ``lr_min`` at
    step ``total``. Beyond ``total`` it stays at ``lr_min``.

    Attributes
    ----------
    lr : :class:`float`
        Peak learning rate

    warmup : :class:`int`
        Number of warmup steps

    total : :class:`int`
        Step at which the decay ends

    lr_min : :class:`float`
        Final learning rate

    """

    def __init__(self, lr=2e-3, warmup=100, total=2000, lr_min=1e-4):
        if warmup < 0 or total < 1:
            raise ValueError("Warmup must be >= 0 and total >= 1")
        if not 0 <= lr_min <= lr:
            raise ValueError("Require 0 <= lr_min <= lr")
        self.lr = lr
        self.warmup = warmup
        self.total = total
        self.lr_min = lr_min

    def __call__(self, step=0):
        """Return the learning rate of a step, counting from zero."""
        if step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        span = max(self.total - self.warmup, 1)
        progress = min((step - self.warmup) / span, 1.0)
        cosine = 0.5 * (1.0 + math.cos(math.pi * progress))
        return self.lr_min + (self.lr - self.lr_min) * cosine


def train_step(batch=None, params=None, optimizer=None, task=None, cfg=None):
    """
    Perform one optimisation step on a batch.

    Parameters
    ----------
    batch : :class:`dict`
        "rows" (B x L_I embedding rows) or "tokens" (B x L_I x D), and
        "targets" (B x L_I category indices)

    params : :class:`ModelParams`
        Weights, updated in place

    optimizer : :class:`AdamW`
        Optimizer, its state updated in place

    task : :class:`SegmentationTask`
        Prompt and categories

    cfg : :class:`ModelConfig`
        Model sizes

    Returns
    -------
    loss : :class:`float`
        Mean negative log-likelihood of the batch before the update

    Raises
    ------
    ValueError
        Raised for an empty batch.

    NumericalError
        Raised if the loss is not finite.

    """
    targets = np.asarray(batch["targets"])
    if targets.size == 0:
        raise ValueError("Empty batch")
    params.zero_grad()
    logits = forward(image_tokens(batch, params, cfg), task, params, cfg)
    loss = autograd.masked_nll(logits, targets)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError(
            f"Non-finite loss {value} at step {optimizer.t + 1}"
        )
    loss.backward()
    optimizer.step(params, params.gradients())
    return value


def decode_batch(tokens=None, task=None, params=None, cfg=None):
    """
    Run encoder and decoder on image tokens for inference.

    Parameters
    ----------
    tokens : :class:`numpy.ndarray`
        Image token embeddings of shape (B, L_I, D) or (L_I, D)

    task : :class:`SegmentationTask`
        Prompt and categories

    params : :class:`ModelParams`
        Weights

    cfg : :class:`ModelConfig`
        Model sizes

    Returns
    -------
    output : :class:`DecoderOutput`
        Decoder outputs of shape (B, L_I, D), detached from the graph

    """
    tokens = _batched(np.asarray(tokens, dtype=cfg.dtype), cfg.dtype)
    constants = ModelParams()
    constants.tensors = {
        name: autograd.Tensor(t.data) for name, t in params.items()
    }
    enc = encode(encoder_input(tokens, task, constants), constants, cfg)
    return decode_spatial(enc, constants, cfg)


class Trainer:
    """
    Train the model on a stream of artificial samples.

    Attributes
    ----------
    params : :class:`ModelParams`
        Weights

    optimizer : :class:`AdamW`
        Optimizer

    task : :class:`SegmentationTask`
        Prompt and categories

    cfg : :class:`ModelConfig`
        Model sizes

    batch_size : :class:`int`
        Number of samples per step

    log_every : :class:`int`
        Number of steps between two progress messages

    schedule : :class:`LearningRateSchedule` or None
        Learning rate per step, the rate of the optimizer stays fixed if
        None

    losses : :class:`list`
        Loss of every step taken

    """

    def __init__(
        self,
        params=None,
        optimizer=None,
        task=None,
        cfg=None,
        batch_size=16,
        log_every=100,
        schedule=None,
    ):
        self.params = params
        self.optimizer = optimizer
        self.task = task
        self.cfg = cfg
        self.batch_size = batch_size
        self.log_every = log_every
        self.schedule = schedule
        self.losses = []

    def train(self, batches=None, steps=1):
        """
        Take a number of optimisation steps.

        Parameters
        ----------
        batches : callable
            Function returning the batch (a dict, see :func:`train_step`)
            for a given step number

        steps : :class:`int`
            Number of steps to take

        """
        window, tokens, started = [], 0, time.perf_counter()
        for count in range(steps):
            if self.schedule is not None:
                self.optimizer.lr = self.schedule(self.optimizer.t)
            batch = batches(self.optimizer.t)
            loss = train_step(
                batch, self.params, self.optimizer, self.task, self.cfg
            )
            self.losses.append(loss)
            window.append(loss)
            tokens += np.asarray(batch["targets"]).size
            if self.optimizer.t % self.log_every == 0 or count == steps - 1:
                elapsed = max(time.perf_counter() - started, 1e-9)
                logger.info(
                    "step=%d loss=%.6f tokens_per_s=%.1f",
                    self.optimizer.t,
                    float(np.mean(window)),
                    tokens / elapsed,
                )
                window, tokens, started = [], 0, time.perf_counter()


class Checkpoint:
    """
    Everything needed to continue training or to run inference.

    Attributes
    ----------
    params : :class:`ModelParams`
        Weights, including the embedding

    optimizer : :class:`AdamW`
        Optimizer with its moment estimates and step count

    cfg : :class:`ModelConfig`
        Model sizes

    task : :class:`SegmentationTask`
        Prompt and categories

    category_names : :class:`list`
        Names of the segmentation categories

    projection : :class:`tuple`
        Frozen backbone projection (weight, bias)

    settings : :class:`dict`
        Run configuration values the checkpoint was trained with

    """

    def __init__(
        self,
        params=None,
        optimizer=None,
        cfg=None,
        task=None,
        category_names=None,
        projection=None,
        settings=None,
    ):
        self.params = params
        self.optimizer = optimizer
        self.cfg = cfg
        self.task = task
        self.category_names = list(category_names or [])
        self.projection = projection
        self.settings = settings or {}

    def metadata(self):
        """Return the metadata stored alongside the tensors."""
        return {
            "model": self.cfg.to_dict(),
            "optimizer": {
                "lr": self.optimizer.lr,
                "weight_decay": self.optimizer.weight_decay,
                "beta1": self.optimizer.beta1,
                "beta2": self.optimizer.beta2,
                "eps": self.optimizer.eps,
                "step": self.optimizer.t,
            },
            "categories": self.category_names,
            "settings": self.settings,
        }

    def to_tensors(self):
        """
        Return all sections of the checkpoint container.

        Returns
        -------
        tensors : :class:`dict`
            Section name -> array, in a fixed order

        """
        tensors = {}
        for name, tensor in self.params.items():
            tensors[f"param.{name}"] = tensor.data
        for name in self.optimizer.m:
            tensors[f"adam.m.{name}"] = self.optimizer.m[name]
            tensors[f"adam.v.{name}"] = self.optimizer.v[name]
        tensors["task.prompt_ids"] = self.task.prompt_ids.astype(np.uint32)
        tensors["task.merged_ids"] = self.task.merged_ids.astype(np.uint32)
        tensors["backbone.weight"] = self.projection[0]
        tensors["backbone.bias"] = self.projection[1]
        tensors["metadata"] = encode_text(
            yaml.safe_dump(self.metadata(), sort_keys=False)
        )
        return tensors

    @classmethod
    def from_tensors(cls, tensors=None):
        """
        Restore a checkpoint from container sections.

        Raises
        ------
        ValueError
            Raised if sections are missing or do not fit the metadata.

        """
        try:
            metadata = yaml.safe_load(decode_text(tensors["metadata"]))
            cfg = ModelConfig.from_dict(metadata["model"])
            settings = metadata["optimizer"]
            params = ModelParams(
                {
                    name[len("param."):]: array
                    for name, array in tensors.items()
                    if name.startswith("param.")
                }
            )
            expected = set(cfg.shapes()) | {"embedding"}
            if set(params.tensors) != expected:
                raise ValueError("Checkpoint weights do not fit the model")
            optimizer = AdamW(
                lr=settings["lr"],
                weight_decay=settings["weight_decay"],
                beta1=settings["beta1"],
                beta2=settings["beta2"],
                eps=settings["eps"],
            )
            optimizer.t = int(settings["step"])
            for name in params.tensors:
                if f"adam.m.{name}" in tensors:
                    optimizer.m[name] = tensors[f"adam.m.{name}"].copy()
                    optimizer.v[name] = tensors[f"adam.v.{name}"].copy()
            task = SegmentationTask(
                tensors["task.prompt_ids"], tensors["task.merged_ids"]
            )
            projection = (
                tensors["backbone.weight"],
                tensors["backbone.bias"],
            )
        except KeyError as error:
            raise ValueError(f"Checkpoint lacks {error}") from error
        return cls(
            params=params,
            optimizer=optimizer,
            cfg=cfg,
            task=task,
            category_names=metadata["categories"],
            projection=projection,
            settings=metadata.get("settings") or {},
        )


def encode_text(text=""):
    """Store UTF-8 text as a u32 array (one element per byte)."""
    data = np.frombuffer(text.encode("utf8"), dtype=np.uint8)
    return data.astype(np.uint32)


def decode_text(array=None):
    """Inverse of :func:`encode_text`."""
    return np.asarray(array, dtype=np.uint8).tobytes().decode("utf8")
