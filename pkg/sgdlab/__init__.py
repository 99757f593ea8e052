# sgdlab/__init__.py
