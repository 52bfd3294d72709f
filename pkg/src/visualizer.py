import matplotlib
import matplotlib.pyplot as plt
import seaborn as sns
import numpy as np
from matplotlib.figure import Figure
from typing import List, Optional, Sequence, Union

import config
from engines.dsp_engine import AudioTrack, mel_filterbank, stft, LOG_FLOOR


class Visualizer:
    """
    Presentation Layer for training and audio inspection.

    Renders loss curves of micro-training runs and log-mel spectrograms of
    inputs, targets and model outputs using Matplotlib/Seaborn.
    """
    def __init__(self, theme: str = "darkgrid") -> None:
        sns.set_theme(style=theme)

    def plot_loss_curve(
        self,
        losses: Union[List[float], np.ndarray],
        val_losses: Optional[Sequence[float]] = None,
        restarts: Sequence[int] = (),
        log_scale: bool = True,
    ) -> Figure:
        """
        Training loss per step, optional validation L1 and markers at learning-rate restarts.

        Args:
            losses: Spectrogram L2 loss per step
            val_losses: Validation L1 values, spread evenly over the run
            restarts: Steps where the learning rate was halved

        Returns:
            A Matplotlib Figure object
        """
        fig, ax = plt.subplots(figsize=(10, 6))
        steps = np.arange(1, len(losses) + 1)
        sns.lineplot(x=steps, y=np.asarray(losses), ax=ax, label="train L2", linewidth=2)

        if val_losses:
            val_steps = np.linspace(1, len(losses), num=len(val_losses))
            ax2 = ax.twinx()
            ax2.plot(val_steps, val_losses, color='#F39C12', marker="o", label="validation L1")
            ax2.set_ylabel("Validation L1", fontsize=12)
            ax2.grid(False)
            ax2.legend(loc="upper center")

        for step in restarts:
            ax.axvline(step + 1, color='#E74C3C', linestyle='--', linewidth=1.5)

        if log_scale and np.all(np.asarray(losses) > 0):
            ax.set_yscale("log")
        ax.set_title("Micro-training loss", fontsize=14)
        ax.set_xlabel("Step", fontsize=12)
        ax.set_ylabel("Spectrogram L2", fontsize=12)
        ax.legend(loc="upper right")
        return fig

    def plot_mel_spectrogram(self, track: AudioTrack, title: str = "", channel: int = 0,
                             settings: Optional[config.MfccSettings] = None) -> Figure:
        """Log-mel power of one channel on the MFCC analysis grid."""
        settings = settings or config.get_config().mfcc
        spec = stft(track, settings.fft_size, settings.hop)
        power = np.abs(spec.values[channel]) ** 2
        mel = power @ mel_filterbank(track.sample_rate, settings.fft_size, settings.n_mels).T
        fig, ax = plt.subplots(figsize=(10, 4))
        image = ax.imshow(np.log(mel + LOG_FLOOR).T, origin="lower", aspect="auto", cmap="magma")
        fig.colorbar(image, ax=ax, label="log power")
        ax.set_title(title or "Log-mel spectrogram", fontsize=14)
        ax.set_xlabel("Frame", fontsize=12)
        ax.set_ylabel("Mel band", fontsize=12)
        return fig

    @staticmethod
    def save(fig: Figure, path: str) -> None:
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)


# Local Unit Test Block.
if __name__ == "__main__":
    matplotlib.use("Agg")
    print("Testing Visualizer...")
    curve = np.exp(-np.linspace(0, 3, 200)) + 0.05 * np.random.rand(200)
    viz = Visualizer()
    viz.save(viz.plot_loss_curve(curve, restarts=[120]), "loss_curve.png")
    print("✅ Local test complete.")
