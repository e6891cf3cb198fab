"""
Minimal reverse-mode automatic differentiation on top of numpy.

Training the encoder-decoder needs gradients of the loss with respect to
every weight. Rather than deriving the backward pass of the whole network
by hand, the network is composed of a handful of differentiable operations,
each knowing its own local derivative.

Every operation (a subclass of :class:`Op`) computes its result eagerly
from the arrays of its inputs and stores whatever it needs for the backward
pass. The result is a :class:`Tensor` remembering the operation that
created it. Calling :meth:`Tensor.backward` on a scalar result sorts the
graph topologically and lets every operation pass the gradients on to its
inputs, in reverse order.

Gradients are accumulated in a fixed order, hence identical inputs yield
bit-identical gradients.


Available operations
====================

Elementwise and linear algebra: :func:`add`, :func:`mul`, :func:`matmul`,
:func:`reshape`, :func:`transpose`, :func:`index`, :func:`take`,
:func:`concat`, :func:`total`.

Network building blocks: :func:`softmax`, :func:`layer_norm`,
:func:`gelu`, :func:`masked_nll`.


Module documentation
====================

"""
import math

import numpy as np


IGNORE_INDEX = 255
PROBABILITY_FLOOR = 1e-12


class Tensor:
    """
    Array taking part in a computation graph.

    Attributes
    ----------
    data : :class:`numpy.ndarray`
        The values

    grad : :class:`numpy.ndarray` or None
        Accumulated gradient of the last backward pass

    requires_grad : :class:`bool`
        Whether gradients are propagated to this tensor

    op : :class:`Op` or None
        Operation that created the tensor, None for leaves

    """

    def __init__(self, data=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = None

    @property
    def shape(self):
        """Shape of the data."""
        return self.data.shape

    @property
    def ndim(self):
        """Number of dimensions of the data."""
        return self.data.ndim

    @property
    def dtype(self):
        """Dtype of the data."""
        return self.data.dtype

    def __repr__(self):
        return f"Tensor{self.shape}"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        """Return the tensor with a new shape."""
        return reshape(self, shape)

    def transpose(self, *axes):
        """Return the tensor with permuted axes."""
        return transpose(self, axes)

    def accumulate_grad(self, grad=None):
        """Add to the gradient of the tensor."""
        # Never in place: operations may hand the same array to several
        # inputs.
        if self.grad is None:
            self.grad = np.asarray(grad, dtype=self.data.dtype)
        else:
            self.grad = self.grad + grad

    def zero_grad(self):
        """Forget the gradient of the last backward pass."""
        self.grad = None

    def backward(self, grad=None):
        """
        Propagate gradients back through the graph.

        Parameters
        ----------
        grad : :class:`numpy.ndarray`
            Gradient of the final objective with respect to this tensor

            Default: ones, *i.e.*, the tensor itself is the objective

        """
        order = _topological_order(self)
        if grad is None:
            grad = np.ones_like(self.data)
        self.accumulate_grad(grad)
        for tensor in reversed(order):
            if tensor.op is None or tensor.grad is None:
                continue
            grads = tensor.op.backward(tensor.grad)
            for parent, parent_grad in zip(tensor.op.inputs, grads):
                if parent.requires_grad and parent_grad is not None:
                    parent.accumulate_grad(parent_grad)


def parameter(data=None):
    """Create a leaf tensor gradients are propagated to."""
    return Tensor(np.array(data), requires_grad=True)


def astensor(value=None, dtype=None):
    """Return tensors unchanged and wrap everything else as a constant."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _topological_order(tensor):
    order = []
    visited = set()
    stack = [(tensor, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.op is not None:
            for parent in node.op.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Op:
    """
    Base class of all differentiable operations.

    Subclasses implement :meth:`forward` on plain arrays and
    :meth:`backward`, returning one gradient (or None) per input.

    Attributes
    ----------
    inputs : :class:`tuple`
        Input tensors of the operation

    needs : :class:`tuple`
        Whether each input requires a gradient

    ctx : :class:`dict`
        Values stored during the forward pass for use in the backward pass

    """

    def __init__(self):
        self.inputs = ()
        self.needs = ()
        self.ctx = {}

    def store_ctx(self, **kwargs):
        """Store intermediate results for the backward pass."""
        self.ctx.update(kwargs)

    def full_forward(self, *inputs, **kwargs):
        """
        Apply the operation to tensors and connect the result to the graph.

        Returns
        -------
        result : :class:`Tensor`
            Result, linked to this operation if any input requires gradients

        """
        self.inputs = inputs
        self.needs = tuple(t.requires_grad for t in inputs)
        result = Tensor(self.forward(*[t.data for t in inputs], **kwargs))
        if any(self.needs):
            result.requires_grad = True
            result.op = self
        return result

    def forward(self, *args, **kwargs):
        """Compute the result from the input arrays."""
        raise NotImplementedError

    def backward(self, grad):
        """Return the gradients of the inputs given the output gradient."""
        raise NotImplementedError


class OpAdd(Op):
    def forward(self, a, b):
        self.store_ctx(shapes=(a.shape, b.shape))
        return a + b

    def backward(self, grad):
        shape_a, shape_b = self.ctx["shapes"]
        return _unbroadcast(grad, shape_a), _unbroadcast(grad, shape_b)


class OpMul(Op):
    def forward(self, a, b):
        self.store_ctx(a=a, b=b)
        return a * b

    def backward(self, grad):
        a, b = self.ctx["a"], self.ctx["b"]
        need_a, need_b = self.needs
        return (
            _unbroadcast(grad * b, a.shape) if need_a else None,
            _unbroadcast(grad * a, b.shape) if need_b else None,
        )


class OpMatMul(Op):
    # A stack of matrices times a single matrix is folded into one product.
    def forward(self, a, b):
        self.store_ctx(a=a, b=b)
        if a.ndim > 2 and b.ndim == 2:
            flat = a.reshape(-1, a.shape[-1]) @ b
            return flat.reshape(*a.shape[:-1], b.shape[-1])
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.ctx["a"], self.ctx["b"]
        need_a, need_b = self.needs
        if a.ndim > 2 and b.ndim == 2:
            flat_grad = grad.reshape(-1, grad.shape[-1])
            grad_a = (flat_grad @ b.T).reshape(a.shape) if need_a else None
            grad_b = (
                a.reshape(-1, a.shape[-1]).T @ flat_grad if need_b else None
            )
            return grad_a, grad_b
        grad_a = grad_b = None
        if need_a:
            grad_a = _unbroadcast(
                np.matmul(grad, np.swapaxes(b, -1, -2)), a.shape
            )
        if need_b:
            grad_b = _unbroadcast(
                np.matmul(np.swapaxes(a, -1, -2), grad), b.shape
            )
        return grad_a, grad_b


class OpReshape(Op):
    def forward(self, a, shape=()):
        self.store_ctx(shape=a.shape)
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.ctx["shape"]),)


class OpTranspose(Op):
    def forward(self, a, axes=()):
        self.store_ctx(axes=axes)
        return a.transpose(axes)

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.ctx["axes"])),)


class OpIndex(Op):
    # Covers basic slicing and integer-array gathering along the first
    # axis. Gradients of repeated rows are summed in index order.
    def forward(self, a, key=None):
        self.store_ctx(shape=a.shape, dtype=a.dtype, key=key)
        return a[key]

    def backward(self, grad):
        shape, key = self.ctx["shape"], self.ctx["key"]
        result = np.zeros(shape, dtype=self.ctx["dtype"])
        if not isinstance(key, np.ndarray):
            result[key] = grad
            return (result,)
        rows = key.ravel()
        if not rows.size:
            return (result,)
        order = np.argsort(rows, kind="stable")
        ordered = rows[order]
        starts = np.flatnonzero(
            np.concatenate([[True], ordered[1:] != ordered[:-1]])
        )
        grad = grad.reshape(rows.size, *shape[1:])[order]
        result[ordered[starts]] = np.add.reduceat(grad, starts, axis=0)
        return (result,)


class OpConcat(Op):
    def forward(self, *arrays, axis=0):
        self.store_ctx(
            axis=axis, sections=np.cumsum([a.shape[axis] for a in arrays])
        )
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        sections = self.ctx["sections"][:-1]
        return tuple(np.split(grad, sections, axis=self.ctx["axis"]))


class OpTotal(Op):
    def forward(self, a):
        self.store_ctx(shape=a.shape)
        return a.sum()

    def backward(self, grad):
        return (np.broadcast_to(grad, self.ctx["shape"]).copy(),)


class OpSoftmax(Op):
    def forward(self, a):
        result = a - a.max(axis=-1, keepdims=True)
        np.exp(result, out=result)
        result /= result.sum(axis=-1, keepdims=True)
        self.store_ctx(result=result)
        return result

    def backward(self, grad):
        result = self.ctx["result"]
        inner = (grad * result).sum(axis=-1, keepdims=True)
        return (result * (grad - inner),)


class OpLayerNorm(Op):
    def forward(self, x, scale, offset, eps=1e-5):
        centred = x - x.mean(axis=-1, keepdims=True)
        rstd = 1.0 / np.sqrt((centred**2).mean(axis=-1, keepdims=True) + eps)
        normed = centred * rstd
        self.store_ctx(normed=normed, rstd=rstd, scale=scale)
        return normed * scale + offset

    def backward(self, grad):
        normed, rstd, scale = (
            self.ctx["normed"],
            self.ctx["rstd"],
            self.ctx["scale"],
        )
        reduce_axes = tuple(range(grad.ndim - 1))
        grad_scale = (grad * normed).sum(axis=reduce_axes)
        grad_offset = grad.sum(axis=reduce_axes)
        grad_normed = grad * scale
        grad_x = rstd * (
            grad_normed
            - grad_normed.mean(axis=-1, keepdims=True)
            - normed * (grad_normed * normed).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_scale, grad_offset


class OpGelu(Op):
    # tanh approximation
    def forward(self, x):
        coefficient = math.sqrt(2.0 / math.pi)
        inner = coefficient * (x + 0.044715 * x * x * x)
        tanh = np.tanh(inner)
        self.store_ctx(x=x, tanh=tanh, coefficient=coefficient)
        return 0.5 * x * (1.0 + tanh)

    def backward(self, grad):
        x, tanh, coefficient = (
            self.ctx["x"],
            self.ctx["tanh"],
            self.ctx["coefficient"],
        )
        derivative = 0.5 * (1.0 + tanh) + 0.5 * x * (1.0 - tanh * tanh) * (
            coefficient * (1.0 + 3 * 0.044715 * x * x)
        )
        return (grad * derivative,)


class OpMaskedNll(Op):
    def forward(self, logits, targets=None, ignore_index=IGNORE_INDEX):
        targets = np.asarray(targets)
        valid = targets != ignore_index
        count = int(valid.sum())
        if not count:
            raise ValueError("All target positions are ignored")
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_probs = shifted - np.log(
            np.exp(shifted).sum(axis=-1, keepdims=True)
        )
        safe_targets = np.where(valid, targets, 0)
        target_log_probs = np.take_along_axis(
            log_probs, safe_targets[..., np.newaxis], axis=-1
        )[..., 0]
        floor = math.log(PROBABILITY_FLOOR)
        losses = -np.maximum(target_log_probs, floor)
        # positions at the floor are constant and receive no gradient
        active = valid & (target_log_probs >= floor)
        self.store_ctx(
            log_probs=log_probs,
            targets=safe_targets,
            active=active,
            count=count,
        )
        return np.asarray(losses[valid].sum() / count, dtype=logits.dtype)

    def backward(self, grad):
        probs = np.exp(self.ctx["log_probs"])
        one_hot = np.zeros_like(probs)
        np.put_along_axis(
            one_hot, self.ctx["targets"][..., np.newaxis], 1.0, axis=-1
        )
        active = self.ctx["active"][..., np.newaxis]
        scale = active * (grad / self.ctx["count"])
        result = (probs - one_hot) * scale
        return (result.astype(probs.dtype),)


def add(a, b):
    """Elementwise sum with broadcasting."""
    a, b = _pair(a, b)
    return OpAdd().full_forward(a, b)


def mul(a, b):
    """Elementwise product with broadcasting."""
    a, b = _pair(a, b)
    return OpMul().full_forward(a, b)


def matmul(a, b):
    """Matrix product with numpy broadcasting of leading axes."""
    a, b = _pair(a, b)
    return OpMatMul().full_forward(a, b)


def reshape(a, shape=()):
    """Reshape a tensor."""
    return OpReshape().full_forward(a, shape=tuple(shape))


def transpose(a, axes=()):
    """Permute the axes of a tensor."""
    return OpTranspose().full_forward(a, axes=tuple(axes))


def index(a, key=None):
    """Index a tensor with basic slices or integer arrays."""
    return OpIndex().full_forward(a, key=key)


def take(a, indices=None):
    """Gather rows (first axis) of a tensor, *e.g.* embedding lookup."""
    return OpIndex().full_forward(a, key=np.asarray(indices, dtype=np.int64))


def concat(tensors=None, axis=0):
    """Concatenate tensors along an axis."""
    return OpConcat().full_forward(*tensors, axis=axis)


def total(a):
    """Sum of all elements."""
    return OpTotal().full_forward(a)


def softmax(a):
    """Softmax over the last axis."""
    return OpSoftmax().full_forward(a)


def layer_norm(x, scale, offset, eps=1e-5):
    """Layer normalisation over the last axis, with scale and offset."""
    x = astensor(x)
    return OpLayerNorm().full_forward(
        x,
        astensor(scale, dtype=x.dtype),
        astensor(offset, dtype=x.dtype),
        eps=eps,
    )


def gelu(x):
    """Gaussian error linear unit (tanh approximation)."""
    return OpGelu().full_forward(x)


def masked_nll(logits, targets=None, ignore_index=IGNORE_INDEX):
    """
    Mean negative log-likelihood of targets under softmax of logits.

    Probabilities are floored at 1e-12 before taking the logarithm, and
    positions whose target equals ``ignore_index`` do not count.

    Parameters
    ----------
    logits : :class:`Tensor`
        Logits of shape (..., M)

    targets : :class:`numpy.ndarray`
        Integer targets of shape (...)

    ignore_index : :class:`int`
        Target value marking ignored positions

    Returns
    -------
    loss : :class:`Tensor`
        Scalar loss

    Raises
    ------
    ValueError
        Raised if all positions are ignored.

    """
    return OpMaskedNll().full_forward(
        logits, targets=targets, ignore_index=ignore_index
    )


def _pair(a, b):
    dtype = next(
        (t.dtype for t in (a, b) if isinstance(t, Tensor)), np.float64
    )
    return astensor(a, dtype=dtype), astensor(b, dtype=dtype)
