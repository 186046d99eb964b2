import torch


def fd_gradient(fn, x: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar function w.r.t. a flat tensor."""
    grad = torch.zeros_like(x)
    flat = x.flatten()
    gflat = grad.flatten()
    for i in range(len(flat)):
        orig = float(flat[i])
        flat[i] = orig + step
        hi = float(fn(x))
        flat[i] = orig - step
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def assert_grads_close(fn, x: torch.Tensor, rtol: float = 1e-4, step: float = 1e-5):
    """Autograd gradient of scalar fn(x) must match central differences."""
    x = x.detach().double().requires_grad_(True)
    fn(x).backward()
    analytic = x.grad.detach().clone()
    numeric = fd_gradient(fn, x.detach().clone(), step)
    scale = numeric.abs().max().clamp(min=1.0)
    err = (analytic - numeric).abs().max() / scale
    assert err < rtol, f"gradient mismatch: rel err {float(err):.3e}"
