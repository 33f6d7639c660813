"""
Dense tensor value type with reverse-mode automatic differentiation

A Tensor wraps a row-major numpy.float64 array of rank 0 to 4.  Operations (see ops.py) record
their parents and a backward closure on the result.  backward() orders the recorded graph
topologically, visits every node exactly once in reverse order and frees the graph afterwards.
"""
import threading
from contextlib import contextmanager
from logging import getLogger

import numpy as np

from ..sliceattn_errors import SliceattnDimensionError, SliceattnNumericError, SliceattnContractError

MAX_RANK = 4

# Recording is switched per thread so that inference in one worker never disables taping in another
_GRAD_STATE = threading.local()

def is_grad_enabled():
    """
    Check if operations executed by the current thread are recorded for backward

    :returns: True if recording is enabled
    :rtype: bool
    """
    return getattr(_GRAD_STATE, 'enabled', True)

@contextmanager
def no_grad():
    """
    Context manager disabling graph recording in the current thread

    Used for inference and for the perturbed evaluations of the finite difference checker.
    """
    previous = is_grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = previous

class Tensor(object):
    """
    Dense 64-bit tensor with optional gradient

    :param data: array-like content, copied into a new float64 array
    :param requires_grad: True if backward should populate grad for this tensor
    :param name: optional name, used in diagnostics and in checkpoints
    """

    def __init__(self, data, requires_grad=False, name=None):
        array = np.array(data, dtype=np.float64)
        if array.ndim > MAX_RANK:
            raise SliceattnDimensionError("Tensor rank {} exceeds maximum rank {}".format(array.ndim, MAX_RANK))
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.op = None
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data, parents, backward_fn, op):
        """
        Create the result of a recorded operation

        The result takes ownership of data (no copy).  It requires grad if any parent does and
        recording is enabled in this thread.

        :param data: numpy.float64 array produced by the forward computation
        :param parents: tuple of input tensors
        :param backward_fn: function mapping the output gradient to a tuple of parent gradients
            (one entry per parent, None for parents that need no gradient)
        :param op: operation name
        :raises SliceattnNumericError: if the forward result contains NaN or Inf
        """
        if not np.all(np.isfinite(data)):
            raise SliceattnNumericError("{} produced non-finite values".format(op))
        if data.ndim > MAX_RANK:
            raise SliceattnDimensionError("{} result rank {} exceeds maximum rank {}".format(op, data.ndim,
                                                                                              MAX_RANK))
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        out.requires_grad = is_grad_enabled() and any(parent.requires_grad for parent in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        """
        Extents of the tensor as a tuple
        """
        return self.data.shape

    @property
    def ndim(self):
        """
        Rank of the tensor
        """
        return self.data.ndim

    @property
    def size(self):
        """
        Number of elements (product of the extents)
        """
        return self.data.size

    @property
    def is_leaf(self):
        """
        True if the tensor was not produced by a recorded operation
        """
        return self._backward is None

    def item(self):
        """
        Value of a single element tensor as a Python float
        """
        if self.size != 1:
            raise SliceattnContractError("item() needs a single element tensor, got shape {}".format(self.shape))
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        """
        Copy of the content as a numpy array
        """
        return self.data.copy()

    def detach(self):
        """
        New leaf tensor sharing no graph with this one
        """
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self):
        """
        Drop any accumulated gradient
        """
        self.grad = None

    def backward(self):
        """
        Run reverse-mode differentiation from this scalar tensor, see backward()
        """
        backward(self)

    def __repr__(self):
        return "Tensor(shape={}, requires_grad={}{})".format(
            self.shape, self.requires_grad, ", name='{}'".format(self.name) if self.name else "")

class Graph(object):
    """
    Ordered record of the operations reachable from a root tensor

    Every node's parents precede it in nodes.
    """

    def __init__(self, root):
        self.root = root
        self.nodes = self._topological_order(root)

    @staticmethod
    def _topological_order(root):
        # Iterative post-order DFS; recursion would overflow on long chains
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents): #pylint: disable=protected-access
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def free(self):
        """
        Release parent references and saved activations of all recorded operations
        """
        for node in self.nodes:
            node._parents = () #pylint: disable=protected-access
            node._backward = None #pylint: disable=protected-access

def backward(loss):
    """
    Populate grad of every requires_grad tensor reachable from loss with d(loss)/d(tensor)

    Gradients flowing into one tensor from several consumers are summed.  Gradients of leaf tensors
    accumulate across calls until zero_grad() is called.  The graph is freed afterwards.

    :param loss: scalar (single element) tensor produced by a recorded forward pass
    :raises SliceattnContractError: if loss is not a scalar or was not recorded
    """
    logger = getLogger(__name__)
    if loss.size != 1:
        raise SliceattnContractError("backward needs a scalar loss, got shape {}".format(loss.shape))
    if not loss.requires_grad:
        raise SliceattnContractError("backward on a tensor that does not require grad")

    graph = Graph(loss)
    logger.debug("Backward over %d nodes", len(graph))
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        node.grad = grad if node.grad is None else node.grad + grad
        if node.is_leaf:
            continue
        parent_grads = node._backward(grad) #pylint: disable=protected-access
        for parent, parent_grad in zip(node._parents, parent_grads): #pylint: disable=protected-access
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + parent_grad
            else:
                pending[key] = parent_grad
    graph.free()
