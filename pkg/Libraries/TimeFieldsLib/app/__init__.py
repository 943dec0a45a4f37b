# TimeFieldsLib/app/__init__.py
