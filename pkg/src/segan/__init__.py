"""Desk-scale structure-enhanced GAN for compressed-sensing MRI."""
