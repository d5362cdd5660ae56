"""Label-denoising adversarial lighting regression at desk scale."""
