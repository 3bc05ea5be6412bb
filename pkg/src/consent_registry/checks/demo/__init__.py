"""Safety and conservation checks over the end-to-end demo."""
