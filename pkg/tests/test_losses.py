import pytest
import torch

from segstyle.errors import ContractError
from segstyle.losses import LossWeights, content_loss, identity_losses, style_loss
from segstyle.net import StyleTransferNet, to_tensor

from conftest import random_image, smooth_image


class IdentityNet:
    """A network stand-in that reproduces its content input exactly."""

    def __init__(self, real_net):
        self._net = real_net

    def stylize_tensor(self, content, style):
        return content

    def encode_pyramid(self, x):
        return self._net.encode_pyramid(x)


class TestZeroCases:
    @pytest.mark.parametrize("seed", range(10))
    def test_style_loss_of_image_with_itself_is_zero(self, tiny_net, seed):
        x = to_tensor(random_image(32, 32, seed=seed))
        assert float(style_loss(tiny_net, x, x)) == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_content_loss_of_image_with_itself_is_zero(self, tiny_net, seed):
        x = to_tensor(random_image(32, 32, seed=seed))
        assert float(content_loss(tiny_net, x, x)) == pytest.approx(0.0, abs=1e-6)

    def test_identity_network_has_zero_identity_losses(self, tiny_net):
        net = IdentityNet(tiny_net)
        c = to_tensor(random_image(32, 32, seed=1))
        s = to_tensor(random_image(32, 32, seed=2))
        l1, l2 = identity_losses(net, c, s)
        assert float(l1) == 0.0
        assert float(l2) == 0.0


class TestPositivity:
    def test_all_terms_nonnegative_on_random_pairs(self, tiny_net):
        for seed in range(20):
            c = to_tensor(random_image(32, 32, seed=3 * seed))
            s = to_tensor(random_image(32, 32, seed=3 * seed + 1))
            with torch.no_grad():
                ics = tiny_net.stylize_tensor(c, s)
                assert float(content_loss(tiny_net, ics, c)) >= 0.0
                assert float(style_loss(tiny_net, ics, s)) >= 0.0
                l1, l2 = identity_losses(tiny_net, c, s)
            assert float(l1) >= 0.0 and float(l2) >= 0.0

    def test_losses_strictly_positive_for_random_weights(self):
        net = StyleTransferNet("tiny", seed=77)
        c = to_tensor(smooth_image(32, 32, seed=5))
        s = to_tensor(smooth_image(32, 32, seed=6))
        with torch.no_grad():
            ics = net.stylize_tensor(c, s)
            lc = float(content_loss(net, ics, c))
            ls = float(style_loss(net, ics, s))
            l1, l2 = identity_losses(net, c, s)
        assert lc > 0.0 and ls > 0.0
        assert float(l1) > 0.0 and float(l2) > 0.0

    def test_image_inputs_accepted_directly(self, tiny_net):
        a = random_image(32, 32, seed=7)
        b = random_image(32, 32, seed=8)
        assert float(style_loss(tiny_net, a, b)) > 0.0


class TestBatchSemantics:
    def test_batched_loss_is_mean_of_singles(self, tiny_net):
        xs = [to_tensor(random_image(32, 32, seed=20 + k)) for k in range(3)]
        ys = [to_tensor(random_image(32, 32, seed=30 + k)) for k in range(3)]
        batch_x = torch.cat(xs, dim=0)
        batch_y = torch.cat(ys, dim=0)
        with torch.no_grad():
            batched = float(style_loss(tiny_net, batch_x, batch_y))
            singles = [float(style_loss(tiny_net, x, y)) for x, y in zip(xs, ys)]
        assert batched == pytest.approx(sum(singles) / 3, rel=1e-5)


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.content, w.style, w.identity1, w.identity2) == (1.0, 3.0, 50.0, 1.0)

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            LossWeights(style=-1.0)
