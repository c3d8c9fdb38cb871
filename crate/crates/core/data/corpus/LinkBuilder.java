package corpus;

import java.net.URL;

public class LinkBuilder {
    public String host(String text) {
        String clean = text.trim();
        URL url = new URL(clean);
        return url.getHost();
    }
}
