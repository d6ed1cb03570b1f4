# Validators initialization
